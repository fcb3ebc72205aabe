"""Fixed-point encoding over Z_{2^k} and additive secret sharing.

Ring elements are stored as ``numpy.uint64`` arrays; for ``k < 64`` every
result is masked back into ``[0, 2^k)``.  Scalars go in and come out as
plain ``int``; arrays stay arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IncompleteSharesError, ParameterError, RangeError

HEADROOM_BITS = 8


@dataclass(frozen=True)
class FixCfg:
    k: int = 64
    f: int = 16

    def __post_init__(self):
        if not 0 < self.f < self.k:
            raise ParameterError(f"need 0 < f < k, got f={self.f}, k={self.k}")
        if self.k > 64:
            raise ParameterError("ring width above 64 bits is not supported")
        if 2 * self.f + HEADROOM_BITS > self.k:
            raise ParameterError(
                f"2f + {HEADROOM_BITS} headroom bits must fit in k ({2 * self.f + HEADROOM_BITS} > {self.k})"
            )

    @property
    def modulus(self) -> int:
        return 1 << self.k

    @property
    def mask(self) -> np.uint64:
        return np.uint64((1 << self.k) - 1)

    @property
    def scale(self) -> int:
        return 1 << self.f

    @property
    def bound(self) -> float:
        """Exclusive magnitude bound for encodable reals."""
        return float(2 ** (self.k - self.f - 1))

    def wrap(self, v):
        """Reduce a uint64 array into the ring."""
        v = np.asarray(v, dtype=np.uint64)
        if self.k == 64:
            return v
        return v & self.mask

    def to_signed(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.uint64)
        if self.k == 64:
            return v.view(np.int64)
        s = (v & self.mask).astype(np.int64)
        return np.where(s >= (1 << (self.k - 1)), s - (1 << self.k), s)

    def from_signed(self, s) -> np.ndarray:
        return self.wrap(np.asarray(s, dtype=np.int64).astype(np.uint64))


DEFAULT_CFG = FixCfg()


def _out(arr, scalar):
    return int(arr) if scalar else arr


def fx_encode(x, cfg: FixCfg = DEFAULT_CFG):
    """round(x * 2^f) mod 2^k, two's complement for negatives."""
    scalar = np.ndim(x) == 0
    xa = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(xa)):
        raise RangeError("cannot encode non-finite values")
    if xa.size and np.max(np.abs(xa)) >= cfg.bound:
        raise RangeError(f"|x| must be below 2^{cfg.k - cfg.f - 1}, got {np.max(np.abs(xa))}")
    ints = np.round(xa * cfg.scale).astype(np.int64)
    return _out(cfg.from_signed(ints), scalar)


def fx_decode(v, cfg: FixCfg = DEFAULT_CFG):
    scalar = np.ndim(v) == 0
    out = cfg.to_signed(np.asarray(v, dtype=np.uint64)).astype(np.float64) / cfg.scale
    return float(out) if scalar else out


def random_ring(rng: np.random.Generator, shape, cfg: FixCfg = DEFAULT_CFG) -> np.ndarray:
    r = rng.integers(0, 1 << 64, size=shape, dtype=np.uint64, endpoint=False)
    return cfg.wrap(r)


@dataclass(frozen=True)
class ShareSet:
    """Additive shares; ``pieces[i]`` is held by party ``i``."""

    pieces: tuple
    cfg: FixCfg = field(default=DEFAULT_CFG)

    @property
    def party_count(self) -> int:
        return len(self.pieces)


def share_n(x, n: int, rng: np.random.Generator, cfg: FixCfg = DEFAULT_CFG) -> ShareSet:
    if n < 2:
        raise ParameterError(f"need at least 2 parties, got {n}")
    xa = cfg.wrap(np.array(x, dtype=np.uint64, ndmin=1))
    pieces = [random_ring(rng, xa.shape, cfg) for _ in range(n - 1)]
    last = xa.copy()
    for p in pieces:
        last = last - p
    pieces.append(cfg.wrap(last))
    if np.ndim(x) == 0:
        pieces = [int(p[0]) for p in pieces]
    return ShareSet(tuple(pieces), cfg)


def reconstruct(s: ShareSet):
    if any(p is None for p in s.pieces) or s.party_count < 2:
        raise IncompleteSharesError(
            f"{sum(p is None for p in s.pieces)} of {s.party_count} pieces missing"
        )
    scalar = all(np.ndim(p) == 0 for p in s.pieces)
    total = np.zeros(np.shape(s.pieces[0]) or (1,), dtype=np.uint64)
    for p in s.pieces:
        total = total + np.array(p, dtype=np.uint64, ndmin=1)
    total = s.cfg.wrap(total)
    return int(total[0]) if scalar else total


def convert_2_to_n(a, b, n: int, rng: np.random.Generator, cfg: FixCfg = DEFAULT_CFG) -> list:
    """Lift a 2-party sharing (a, b) to n pieces.

    Both holders reshare their piece n ways; party k keeps the sum of the
    k-th sub-pieces it receives.
    """
    sa = share_n(a, n, rng, cfg)
    sb = share_n(b, n, rng, cfg)
    scalar = np.ndim(a) == 0 and np.ndim(b) == 0
    out = []
    for pa, pb in zip(sa.pieces, sb.pieces):
        v = cfg.wrap(np.array(pa, dtype=np.uint64, ndmin=1) + np.array(pb, dtype=np.uint64, ndmin=1))
        out.append(int(v[0]) if scalar else v)
    return out
