"""Semi-honest arithmetic MPC over additive shares in Z_{2^k}.

Offline material (Beaver triples, square pairs, truncation masks) comes
from a trusted :class:`Dealer`; only the online phase talks over the
:class:`~shapmkt.transport.Network`.

Every tensor carries a ``scale``: the number of fractional bits of its
encoding (``cfg.f`` for ordinary values, ``0`` for raw ring integers).
Multiplying two tensors truncates the product back to the larger of the
two input scales.

:class:`PlainFixedPoint` runs the same operation set on cleartext ring
values and is the bit-exact reference for exact-truncation runs.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from .errors import AbortError, DealerError, ParameterError, RangeError, ShapeError
from .ring import DEFAULT_CFG, FixCfg, fx_decode, fx_encode, random_ring
from .transport import FRAME_BYTES, CostStats, Network

EXACT = "exact"
LOCAL = "local"
TRUNC_MODES = (EXACT, LOCAL)

# statistical masking parameter of exact truncation
STAT_SEC = 16


def trunc_input_bits(cfg: FixCfg, stat_sec: int = STAT_SEC) -> int:
    """Exact truncation accepts signed inputs with |x| < 2^(L-1), L returned here."""
    return cfg.k - stat_sec - 2


def _u64(x):
    return np.asarray(x, dtype=np.uint64)


def _is_integral(c) -> bool:
    c = np.asarray(c, dtype=np.float64)
    return bool(np.all(np.isfinite(c)) and np.all(c == np.round(c)))


def _int_to_ring(c, cfg: FixCfg) -> np.ndarray:
    return cfg.from_signed(np.round(np.asarray(c, dtype=np.float64)).astype(np.int64))


@dataclass
class SharedTensor:
    parties: tuple
    pieces: tuple
    cfg: FixCfg = DEFAULT_CFG
    scale: int = DEFAULT_CFG.f

    def __post_init__(self):
        if len(self.parties) != len(self.pieces):
            raise ShapeError("one piece per party required")
        shapes = {np.shape(p) for p in self.pieces}
        if len(shapes) != 1:
            raise ShapeError(f"piece shapes differ: {shapes}")

    @property
    def shape(self) -> tuple:
        return np.shape(self.pieces[0])

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def party_count(self) -> int:
        return len(self.parties)

    def piece_of(self, party) -> np.ndarray:
        return self.pieces[self.parties.index(party)]

    def map(self, fn) -> "SharedTensor":
        """Apply a shape-only (data independent) transform to every piece."""
        return SharedTensor(self.parties, tuple(fn(p) for p in self.pieces), self.cfg, self.scale)

    def __getitem__(self, idx) -> "SharedTensor":
        return self.map(lambda p: p[idx])

    @property
    def T(self) -> "SharedTensor":
        return self.map(lambda p: p.T)

    def reshape(self, *shape) -> "SharedTensor":
        return self.map(lambda p: p.reshape(*shape))


@dataclass
class PlainTensor:
    """Cleartext ring tensor used by :class:`PlainFixedPoint`."""

    value: np.ndarray
    cfg: FixCfg = DEFAULT_CFG
    scale: int = DEFAULT_CFG.f
    parties: tuple = ()

    @property
    def shape(self) -> tuple:
        return np.shape(self.value)

    def map(self, fn) -> "PlainTensor":
        return PlainTensor(fn(self.value), self.cfg, self.scale, self.parties)

    def __getitem__(self, idx) -> "PlainTensor":
        return self.map(lambda v: v[idx])

    @property
    def T(self) -> "PlainTensor":
        return self.map(lambda v: v.T)

    def reshape(self, *shape) -> "PlainTensor":
        return self.map(lambda v: v.reshape(*shape))


class Dealer:
    """Trusted source of correlated randomness; nothing is ever reused."""

    def __init__(self, rng: np.random.Generator, cfg: FixCfg = DEFAULT_CFG, budget: int | None = None):
        self.rng = rng
        self.cfg = cfg
        self.budget = budget
        self.triples = 0
        self.squares = 0
        self.trunc_pairs = 0
        self.bit_triples = 0

    def _consume(self, n: int):
        used = self.triples + self.squares + self.trunc_pairs + self.bit_triples
        if self.budget is not None and used + n > self.budget:
            raise DealerError(f"dealer exhausted: {used} issued, {n} requested, budget {self.budget}")

    def share(self, value: np.ndarray, nparties: int) -> tuple:
        value = _u64(value)
        pieces = [random_ring(self.rng, value.shape, self.cfg) for _ in range(nparties - 1)]
        last = value.copy()
        for p in pieces:
            last = last - p
        pieces.append(self.cfg.wrap(last))
        return tuple(pieces)

    def triple(self, shape, nparties: int):
        n = int(np.prod(shape, dtype=np.int64))
        self._consume(n)
        self.triples += n
        a = random_ring(self.rng, shape, self.cfg)
        b = random_ring(self.rng, shape, self.cfg)
        c = self.cfg.wrap(a * b)
        return self.share(a, nparties), self.share(b, nparties), self.share(c, nparties)

    def square_pair(self, shape, nparties: int):
        n = int(np.prod(shape, dtype=np.int64))
        self._consume(n)
        self.squares += n
        a = random_ring(self.rng, shape, self.cfg)
        return self.share(a, nparties), self.share(self.cfg.wrap(a * a), nparties)

    def trunc_mask(self, shape, nparties: int, bits: int, stat_sec: int = STAT_SEC):
        """Shares of r_hi and of the ``bits`` low bits of r, r < 2^(L + stat_sec)."""
        n = int(np.prod(shape, dtype=np.int64))
        self._consume(n)
        self.trunc_pairs += n
        width = trunc_input_bits(self.cfg, stat_sec) + stat_sec - bits
        r_hi = self.rng.integers(0, 1 << width, size=shape, dtype=np.uint64)
        r_bits = self.rng.integers(0, 2, size=(bits,) + tuple(shape), dtype=np.uint64)
        return self.share(r_hi, nparties), self.share(r_bits, nparties)

    def bool_triples(self, count: int, nbytes: int, batch: int | None = None):
        """``count`` packed rows of AND triples; one triple per gate per instance."""
        n = count * (batch if batch is not None else 8 * nbytes)
        self._consume(n)
        self.bit_triples += n
        a = self.rng.integers(0, 256, size=(count, nbytes), dtype=np.uint8)
        b = self.rng.integers(0, 256, size=(count, nbytes), dtype=np.uint8)
        c = a & b

        def split(v):
            p0 = self.rng.integers(0, 256, size=v.shape, dtype=np.uint8)
            return p0, v ^ p0

        return split(a), split(b), split(c)

    def counters(self) -> dict:
        return {
            "triples": self.triples,
            "squares": self.squares,
            "trunc_pairs": self.trunc_pairs,
            "bit_triples": self.bit_triples,
        }


@dataclass
class TranscriptEntry:
    op: str
    stats: CostStats = field(default_factory=CostStats)
    _depths: set = field(default_factory=set)


class Engine:
    """Lockstep executor for all parties of one run."""

    def __init__(
        self,
        net: Network,
        dealer: Dealer,
        cfg: FixCfg = DEFAULT_CFG,
        trunc_mode: str = EXACT,
        rng: np.random.Generator | None = None,
        stat_sec: int = STAT_SEC,
    ):
        if trunc_mode not in TRUNC_MODES:
            raise ParameterError(f"truncation mode must be one of {TRUNC_MODES}")
        self.net = net
        self.dealer = dealer
        self.cfg = cfg
        self.trunc_mode = trunc_mode
        self.rng = rng if rng is not None else np.random.default_rng()
        self.stat_sec = stat_sec
        self.elem_bytes = (cfg.k + 7) // 8
        self.views: dict = {p: [] for p in net.parties}
        self.transcript: list[TranscriptEntry] = []
        self.failed: set = set()
        self._op_stack: list[TranscriptEntry] = []

    # -- bookkeeping -------------------------------------------------

    @contextlib.contextmanager
    def _op(self, name: str):
        entry = TranscriptEntry(name)
        self.transcript.append(entry)
        self._op_stack.append(entry)
        try:
            yield entry
        finally:
            self._op_stack.pop()

    def _send(self, messages):
        for s, d, _ in messages:
            if s in self.failed or d in self.failed:
                raise AbortError(f"party {s if s in self.failed else d} stopped responding")
        receipts = self.net.exchange(messages)
        if self._op_stack:
            entry = self._op_stack[-1]
            for r in receipts:
                entry.stats.bytes_by_pair[(r.src, r.dst)] += r.payload_bytes + FRAME_BYTES
                entry.stats.messages += 1
                entry._depths.add(r.round)
                entry.stats.seconds = max(entry.stats.seconds, r.arrive - r.depart)
            entry.stats.rounds = len(entry._depths)
        return receipts

    def fail(self, party):
        """Simulate a party that stops cooperating."""
        self.failed.add(party)

    def report(self) -> str:
        from .transport import format_report

        return format_report([(e.op, e.stats) for e in self.transcript])

    def _check_same(self, *ts):
        parties = ts[0].parties
        for t in ts[1:]:
            if t.parties != parties:
                raise ShapeError(f"tensors live on different party sets {parties} vs {t.parties}")
        return parties

    def _const_pieces(self, value, parties):
        """Public constant shared as (value, 0, ..., 0)."""
        value = _u64(value)
        return tuple([self.cfg.wrap(value)] + [np.zeros_like(value) for _ in parties[1:]])

    def _open_all(self, pieces_list, parties):
        """Reveal several sharings to every party in one round."""
        n_elems = sum(int(np.size(p[0])) for p in pieces_list)
        self._send([(s, d, n_elems * self.elem_bytes) for s in parties for d in parties if s != d])
        out = []
        for pieces in pieces_list:
            total = np.zeros(np.shape(pieces[0]), dtype=np.uint64)
            for p in pieces:
                total = total + p
            out.append(self.cfg.wrap(total))
        return out

    # -- input / output ----------------------------------------------

    def input_tensor(self, owner, values, parties, scale: int | None = None) -> SharedTensor:
        """``owner`` encodes ``values`` and deals one piece to each party."""
        parties = tuple(parties)
        if owner not in parties:
            raise ParameterError(f"owner {owner!r} must be one of the sharing parties")
        scale = self.cfg.f if scale is None else scale
        with self._op("input_tensor"):
            vals = np.asarray(values, dtype=np.float64)
            if scale == self.cfg.f:
                enc = _u64(np.array(fx_encode(vals, self.cfg), dtype=np.uint64))
            else:
                if np.max(np.abs(vals * 2.0**scale), initial=0) >= 2.0 ** (self.cfg.k - 1):
                    raise RangeError("value does not fit the ring")
                enc = self.cfg.from_signed(np.round(vals * 2.0**scale).astype(np.int64))
            return self._input_ring(owner, enc, parties, scale)

    def _input_ring(self, owner, enc, parties, scale) -> SharedTensor:
        pieces = [random_ring(self.rng, np.shape(enc), self.cfg) for _ in parties]
        i = parties.index(owner)
        rest = _u64(enc).copy()
        for j, p in enumerate(pieces):
            if j != i:
                rest = rest - p
        pieces[i] = self.cfg.wrap(rest)
        nbytes = int(np.size(enc)) * self.elem_bytes
        self._send([(owner, d, nbytes) for d in parties if d != owner])
        return SharedTensor(parties, tuple(pieces), self.cfg, scale)

    def public(self, values, parties, scale: int | None = None) -> SharedTensor:
        scale = self.cfg.f if scale is None else scale
        enc = _int_to_ring(np.asarray(values, dtype=np.float64) * 2.0**scale, self.cfg)
        return SharedTensor(tuple(parties), self._const_pieces(enc, parties), self.cfg, scale)

    def open(self, t: SharedTensor, to=None) -> np.ndarray:
        """Reveal ``t`` to party ``to`` (or to everyone when None)."""
        with self._op("open"):
            nbytes = t.size * self.elem_bytes
            receivers = t.parties if to is None else (to,)
            if to is not None and to not in t.parties:
                raise ParameterError(f"receiver {to!r} does not hold the tensor")
            self._send([(s, d, nbytes) for d in receivers for s in t.parties if s != d])
            total = np.zeros(t.shape, dtype=np.uint64)
            for p in t.pieces:
                total = total + p
            total = self.cfg.wrap(total)
            for r in receivers:
                self.views.setdefault(r, []).append(("open", total.copy()))
            return total

    def decode(self, ring_values, scale: int | None = None) -> np.ndarray:
        scale = self.cfg.f if scale is None else scale
        return self.cfg.to_signed(ring_values).astype(np.float64) / 2.0**scale

    def open_float(self, t: SharedTensor, to=None) -> np.ndarray:
        return self.decode(self.open(t, to), t.scale)

    # -- local operations -------------------------------------------

    def add(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        return self.lincomb([(1, x), (1, y)])

    def sub(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        return self.lincomb([(1, x), (-1, y)])

    def sum(self, t: SharedTensor, axis=None) -> SharedTensor:
        with self._op("sum"):
            return SharedTensor(
                t.parties,
                tuple(self.cfg.wrap(np.sum(p, axis=axis, dtype=np.uint64)) for p in t.pieces),
                self.cfg,
                t.scale,
            )

    def stack(self, ts, axis=0) -> SharedTensor:
        parties = self._check_same(*ts)
        if len({t.scale for t in ts}) != 1:
            raise ShapeError("cannot stack tensors of different scale")
        pieces = tuple(np.stack([t.pieces[i] for t in ts], axis=axis) for i in range(len(parties)))
        return SharedTensor(parties, pieces, self.cfg, ts[0].scale)

    def concat(self, ts, axis=0) -> SharedTensor:
        parties = self._check_same(*ts)
        if len({t.scale for t in ts}) != 1:
            raise ShapeError("cannot concatenate tensors of different scale")
        pieces = tuple(np.concatenate([t.pieces[i] for t in ts], axis=axis) for i in range(len(parties)))
        return SharedTensor(parties, pieces, self.cfg, ts[0].scale)

    def lincomb(self, terms, public_offset=None) -> SharedTensor:
        """Σ c_i·x_i + offset with public coefficients (scalars or arrays).

        Integer coefficients act directly on the ring; any fractional
        coefficient is encoded with f bits and the sum truncated once.
        """
        with self._op("lincomb"):
            if not terms:
                raise ShapeError("empty linear combination")
            ts = [t for _, t in terms]
            parties = self._check_same(*ts)
            scale = ts[0].scale
            if any(t.scale != scale for t in ts):
                raise ShapeError("lincomb terms must share a scale")
            try:
                shape = np.broadcast_shapes(*[np.shape(c) for c, _ in terms], *[t.shape for t in ts])
            except ValueError as e:
                raise ShapeError(str(e)) from None
            fractional = not all(_is_integral(c) for c, _ in terms)
            extra = self.cfg.f if fractional else 0
            acc = [np.zeros(shape, dtype=np.uint64) for _ in parties]
            for c, t in terms:
                cr = (
                    _u64(np.array(fx_encode(np.asarray(c, dtype=np.float64), self.cfg), dtype=np.uint64))
                    if fractional
                    else _int_to_ring(c, self.cfg)
                )
                for i, p in enumerate(t.pieces):
                    acc[i] = acc[i] + cr * p
            if public_offset is not None:
                off = _int_to_ring(np.asarray(public_offset, dtype=np.float64) * 2.0 ** (scale + extra), self.cfg)
                acc[0] = acc[0] + off
            out = SharedTensor(parties, tuple(self.cfg.wrap(a) for a in acc), self.cfg, scale + extra)
        if fractional:
            out = self.truncate(out, extra)
        return out

    def public_matmul(self, t: SharedTensor, m) -> SharedTensor:
        """``t @ m`` for a public matrix ``m`` (fractional entries cost one truncation)."""
        m = np.asarray(m, dtype=np.float64)
        with self._op("public_matmul"):
            fractional = not _is_integral(m)
            extra = self.cfg.f if fractional else 0
            mr = (
                _u64(np.array(fx_encode(m, self.cfg), dtype=np.uint64)) if fractional else _int_to_ring(m, self.cfg)
            )
            if t.shape[-1] != mr.shape[0]:
                raise ShapeError(f"cannot multiply {t.shape} by {mr.shape}")
            pieces = tuple(self.cfg.wrap(p @ mr) for p in t.pieces)
            out = SharedTensor(t.parties, pieces, self.cfg, t.scale + extra)
        if fractional:
            out = self.truncate(out, extra)
        return out

    def rescale_up(self, t: SharedTensor, bits: int) -> SharedTensor:
        """Multiply by 2^bits locally, raising the scale."""
        factor = np.uint64(1 << bits)
        return SharedTensor(t.parties, tuple(self.cfg.wrap(p * factor) for p in t.pieces), self.cfg, t.scale + bits)

    # -- multiplication ----------------------------------------------

    def _beaver_raw(self, xp, yp, parties):
        shape = np.shape(xp[0])
        a, b, c = self.dealer.triple(shape, len(parties))
        d_pieces = tuple(self.cfg.wrap(x - ai) for x, ai in zip(xp, a))
        e_pieces = tuple(self.cfg.wrap(y - bi) for y, bi in zip(yp, b))
        d, e = self._open_all([d_pieces, e_pieces], parties)
        z = []
        for i in range(len(parties)):
            zi = c[i] + d * b[i] + e * a[i]
            if i == 0:
                zi = zi + d * e
            z.append(self.cfg.wrap(zi))
        return tuple(z)

    def beaver_mul(self, x: SharedTensor, y: SharedTensor) -> SharedTensor:
        """Elementwise product; result keeps the larger input scale."""
        with self._op("beaver_mul"):
            parties = self._check_same(x, y)
            try:
                shape = np.broadcast_shapes(x.shape, y.shape)
            except ValueError as e:
                raise ShapeError(str(e)) from None
            xp = [np.broadcast_to(p, shape) for p in x.pieces]
            yp = [np.broadcast_to(p, shape) for p in y.pieces]
            z = self._beaver_raw(xp, yp, parties)
            out = SharedTensor(parties, z, self.cfg, x.scale + y.scale)
        drop = min(x.scale, y.scale)
        return self.truncate(out, drop) if drop else out

    def square(self, x: SharedTensor) -> SharedTensor:
        """x² from a dealer pair (a, a²): one opening instead of two."""
        with self._op("square"):
            parties = x.parties
            a, a2 = self.dealer.square_pair(x.shape, len(parties))
            d_pieces = tuple(self.cfg.wrap(p - ai) for p, ai in zip(x.pieces, a))
            (d,) = self._open_all([d_pieces], parties)
            two = np.uint64(2)
            z = []
            for i in range(len(parties)):
                zi = a2[i] + two * d * a[i]
                if i == 0:
                    zi = zi + d * d
                z.append(self.cfg.wrap(zi))
            out = SharedTensor(parties, tuple(z), self.cfg, 2 * x.scale)
        return self.truncate(out, x.scale) if x.scale else out

    def matvec_affine(self, W: SharedTensor, x: SharedTensor, b: SharedTensor | None = None) -> SharedTensor:
        """W·x + b with one Beaver product per scalar term and one truncation per output.

        ``x`` may be a vector ``(n,)`` or a batch of column vectors ``(n, s)``.
        """
        with self._op("matvec_affine"):
            parties = self._check_same(W, x, *([b] if b is not None else []))
            if len(W.shape) != 2 or x.shape[0] != W.shape[1]:
                raise ShapeError(f"cannot apply {W.shape} matrix to {x.shape}")
            m, n = W.shape
            if x.scale != W.scale:
                raise ShapeError("weights and inputs must share a scale")
            if len(x.shape) == 1:
                wp = [p for p in W.pieces]
                xp = [np.broadcast_to(p[None, :], (m, n)) for p in x.pieces]
            else:
                s = x.shape[1]
                wp = [np.broadcast_to(p[:, :, None], (m, n, s)) for p in W.pieces]
                xp = [np.broadcast_to(p[None, :, :], (m, n, s)) for p in x.pieces]
            prods = self._beaver_raw(wp, xp, parties)
            acc = [self.cfg.wrap(np.sum(p, axis=1, dtype=np.uint64)) for p in prods]
            if b is not None:
                if b.shape != (m,) or b.scale != x.scale:
                    raise ShapeError(f"bias must be ({m},) at scale {x.scale}")
                factor = np.uint64(1 << x.scale)
                for i, bp in enumerate(b.pieces):
                    bb = bp * factor
                    acc[i] = self.cfg.wrap(acc[i] + (bb if len(x.shape) == 1 else bb[:, None]))
            out = SharedTensor(parties, tuple(acc), self.cfg, 2 * x.scale)
        return self.truncate(out, x.scale) if x.scale else out

    def mean_readout(self, reps, weights) -> SharedTensor:
        """Average from per-owner sums: (Σ_owner sum_i) / Σ counts."""
        if not reps:
            raise ShapeError("mean_readout needs at least one representation")
        weights = [int(w) for w in weights]
        if len(weights) != len(reps) or sum(weights) <= 0:
            raise ParameterError("one positive sample count per representation required")
        total = sum(weights)
        with self._op("mean_readout"):
            summed = self.lincomb([(1, r) for r in reps]) if len(reps) > 1 else reps[0]
            if total == 1:
                return summed
            return self.lincomb([(1.0 / total, summed)])

    # -- truncation --------------------------------------------------

    def truncate(self, x: SharedTensor, bits: int, mode: str | None = None) -> SharedTensor:
        mode = mode or self.trunc_mode
        if bits == 0:
            return x
        with self._op("truncate"):
            if mode == EXACT:
                return self._trunc_exact(x, bits)
            if mode == LOCAL:
                if x.party_count == 2:
                    return self._trunc_local2(x, bits)
                return self._trunc_prob(x, bits)
            raise ParameterError(f"unknown truncation mode {mode!r}")

    def _trunc_local2(self, x, bits):
        p0, p1 = x.pieces
        s = np.uint64(bits)
        y0 = p0 >> s
        y1 = self.cfg.wrap(np.uint64(0) - (self.cfg.wrap(np.uint64(0) - p1) >> s))
        return SharedTensor(x.parties, (y0, y1), self.cfg, x.scale - bits)

    def _masked_open(self, x, bits):
        """Open c = x + 2^(L-1) + r with r < 2^(L+σ); returns c and the mask shares."""
        parties = x.parties
        L = trunc_input_bits(self.cfg, self.stat_sec)
        r_hi, r_bits = self.dealer.trunc_mask(x.shape, len(parties), bits, self.stat_sec)
        pow_lo = (np.uint64(1) << np.arange(bits, dtype=np.uint64)).reshape((bits,) + (1,) * len(x.shape))
        shift = np.uint64(bits)
        r_pieces = [
            self.cfg.wrap((rh << shift) + np.sum(rb * pow_lo, axis=0, dtype=np.uint64))
            for rh, rb in zip(r_hi, r_bits)
        ]
        masked = [self.cfg.wrap(p + r) for p, r in zip(x.pieces, r_pieces)]
        masked[0] = self.cfg.wrap(masked[0] + np.uint64(1 << (L - 1)))
        (c,) = self._open_all([tuple(masked)], parties)
        if np.any(c >= np.uint64(1 << (L + self.stat_sec + 1))) if L + self.stat_sec + 1 < 64 else False:
            raise RangeError(f"truncation input exceeds 2^{L - 1}")
        return c, r_hi, r_bits, L

    def _trunc_prob(self, x, bits):
        c, r_hi, _, L = self._masked_open(x, bits)
        shift = np.uint64(bits)
        off = np.uint64(1 << (L - 1 - bits))
        pieces = [self.cfg.wrap(np.uint64(0) - rh) for rh in r_hi]
        pieces[0] = self.cfg.wrap(pieces[0] + (c >> shift) - off)
        return SharedTensor(x.parties, tuple(pieces), self.cfg, x.scale - bits)

    def _trunc_exact(self, x, bits):
        parties = x.parties
        n = len(parties)
        c, r_hi, r_bits, L = self._masked_open(x, bits)
        shift = np.uint64(bits)
        c_lo = c & np.uint64((1 << bits) - 1)
        c_bits = [(c_lo >> np.uint64(i)) & np.uint64(1) for i in range(bits)]
        one = np.uint64(1)

        def e_pieces(i):
            # 1 - (r_i xor c_i), public c_i
            pieces = []
            for j in range(n):
                rb = r_bits[j][i]
                if j == 0:
                    v = np.where(c_bits[i] == one, rb, self.cfg.wrap(one - rb))
                else:
                    v = np.where(c_bits[i] == one, rb, self.cfg.wrap(np.uint64(0) - rb))
                pieces.append(v)
            return pieces

        # suffix products P_{i-1} = P_i * e_i, P_{bits-1} = 1
        P = {bits - 1: None}
        prev = e_pieces(bits - 1)
        P[bits - 2] = prev
        for i in range(bits - 2, -1, -1):
            prev = list(self._beaver_raw(prev, e_pieces(i), parties))
            P[i - 1] = prev

        def p_at(i):
            if i == bits - 1:
                return self._const_pieces(np.ones(x.shape, dtype=np.uint64), parties)
            return P[i]

        # borrow = Σ_{c_i = 0} (P_i - P_{i-1})
        borrow = [np.zeros(x.shape, dtype=np.uint64) for _ in range(n)]
        for i in range(bits):
            zero_bit = one - c_bits[i]
            hi, lo = p_at(i), P[i - 1]
            for j in range(n):
                borrow[j] = borrow[j] + zero_bit * (hi[j] - lo[j])
        off = np.uint64(1 << (L - 1 - bits))
        pieces = [self.cfg.wrap(np.uint64(0) - rh - bw) for rh, bw in zip(r_hi, borrow)]
        pieces[0] = self.cfg.wrap(pieces[0] + (c >> shift) - off)
        return SharedTensor(parties, tuple(pieces), self.cfg, x.scale - bits)

    # -- share conversion --------------------------------------------

    def convert_2_to_n(self, t: SharedTensor, parties) -> SharedTensor:
        """Lift a two-party sharing to ``parties``: both holders reshare their piece."""
        parties = tuple(parties)
        if t.party_count != 2:
            raise ParameterError("conversion starts from a two-party sharing")
        if not set(t.parties) <= set(parties) or len(parties) < 2:
            raise ParameterError("both holders must belong to the target party set")
        with self._op("convert_2_to_n"):
            n = len(parties)
            nbytes = t.size * self.elem_bytes
            msgs = []
            sub = []
            for holder, piece in zip(t.parties, t.pieces):
                sub.append(self.dealer_free_share(piece, n))
                msgs.extend((holder, d, nbytes) for d in parties if d != holder)
            self._send(msgs)
            pieces = tuple(self.cfg.wrap(sub[0][k] + sub[1][k]) for k in range(n))
            return SharedTensor(parties, pieces, self.cfg, t.scale)

    def dealer_free_share(self, value, n) -> list:
        """Local n-way resharing by the holder of ``value`` (its own randomness)."""
        pieces = [random_ring(self.rng, np.shape(value), self.cfg) for _ in range(n - 1)]
        last = _u64(value).copy()
        for p in pieces:
            last = last - p
        pieces.append(self.cfg.wrap(last))
        return pieces


class PlainFixedPoint:
    """Cleartext fixed-point interpreter mirroring :class:`Engine` in exact mode."""

    def __init__(self, cfg: FixCfg = DEFAULT_CFG):
        self.cfg = cfg

    def _floor_shift(self, v, bits):
        return self.cfg.from_signed(self.cfg.to_signed(v) >> np.int64(bits))

    def input_tensor(self, owner, values, parties=(), scale=None) -> PlainTensor:
        scale = self.cfg.f if scale is None else scale
        vals = np.asarray(values, dtype=np.float64)
        if scale == self.cfg.f:
            enc = _u64(np.array(fx_encode(vals, self.cfg), dtype=np.uint64))
        else:
            enc = self.cfg.from_signed(np.round(vals * 2.0**scale).astype(np.int64))
        return PlainTensor(enc, self.cfg, scale, tuple(parties))

    def public(self, values, parties=(), scale=None) -> PlainTensor:
        scale = self.cfg.f if scale is None else scale
        return PlainTensor(_int_to_ring(np.asarray(values, dtype=np.float64) * 2.0**scale, self.cfg), self.cfg, scale, tuple(parties))

    def open(self, t: PlainTensor, to=None) -> np.ndarray:
        return t.value.copy()

    def decode(self, ring_values, scale=None):
        scale = self.cfg.f if scale is None else scale
        return self.cfg.to_signed(ring_values).astype(np.float64) / 2.0**scale

    def open_float(self, t: PlainTensor, to=None):
        return self.decode(t.value, t.scale)

    def add(self, x, y):
        return self.lincomb([(1, x), (1, y)])

    def sub(self, x, y):
        return self.lincomb([(1, x), (-1, y)])

    def sum(self, t, axis=None):
        return PlainTensor(self.cfg.wrap(np.sum(t.value, axis=axis, dtype=np.uint64)), self.cfg, t.scale, t.parties)

    def stack(self, ts, axis=0):
        return PlainTensor(np.stack([t.value for t in ts], axis=axis), self.cfg, ts[0].scale, ts[0].parties)

    def concat(self, ts, axis=0):
        return PlainTensor(np.concatenate([t.value for t in ts], axis=axis), self.cfg, ts[0].scale, ts[0].parties)

    def truncate(self, x, bits, mode=None):
        if bits == 0:
            return x
        return PlainTensor(self._floor_shift(x.value, bits), self.cfg, x.scale - bits, x.parties)

    def lincomb(self, terms, public_offset=None):
        scale = terms[0][1].scale
        fractional = not all(_is_integral(c) for c, _ in terms)
        extra = self.cfg.f if fractional else 0
        shape = np.broadcast_shapes(*[np.shape(c) for c, _ in terms], *[t.shape for _, t in terms])
        acc = np.zeros(shape, dtype=np.uint64)
        for c, t in terms:
            cr = (
                _u64(np.array(fx_encode(np.asarray(c, dtype=np.float64), self.cfg), dtype=np.uint64))
                if fractional
                else _int_to_ring(c, self.cfg)
            )
            acc = acc + cr * t.value
        if public_offset is not None:
            acc = acc + _int_to_ring(np.asarray(public_offset, dtype=np.float64) * 2.0 ** (scale + extra), self.cfg)
        out = PlainTensor(self.cfg.wrap(acc), self.cfg, scale + extra, terms[0][1].parties)
        return self.truncate(out, extra)

    def public_matmul(self, t, m):
        m = np.asarray(m, dtype=np.float64)
        fractional = not _is_integral(m)
        extra = self.cfg.f if fractional else 0
        mr = _u64(np.array(fx_encode(m, self.cfg), dtype=np.uint64)) if fractional else _int_to_ring(m, self.cfg)
        out = PlainTensor(self.cfg.wrap(t.value @ mr), self.cfg, t.scale + extra, t.parties)
        return self.truncate(out, extra)

    def rescale_up(self, t, bits):
        return PlainTensor(self.cfg.wrap(t.value * np.uint64(1 << bits)), self.cfg, t.scale + bits, t.parties)

    def beaver_mul(self, x, y):
        out = PlainTensor(self.cfg.wrap(x.value * y.value), self.cfg, x.scale + y.scale, x.parties)
        return self.truncate(out, min(x.scale, y.scale))

    def square(self, x):
        out = PlainTensor(self.cfg.wrap(x.value * x.value), self.cfg, 2 * x.scale, x.parties)
        return self.truncate(out, x.scale)

    def matvec_affine(self, W, x, b=None):
        if len(x.shape) == 1:
            prods = W.value * x.value[None, :]
        else:
            prods = W.value[:, :, None] * x.value[None, :, :]
        acc = np.sum(prods, axis=1, dtype=np.uint64)
        if b is not None:
            bb = b.value * np.uint64(1 << x.scale)
            acc = acc + (bb if len(x.shape) == 1 else bb[:, None])
        out = PlainTensor(self.cfg.wrap(acc), self.cfg, 2 * x.scale, W.parties)
        return self.truncate(out, x.scale)

    def mean_readout(self, reps, weights):
        total = sum(int(w) for w in weights)
        summed = self.lincomb([(1, r) for r in reps]) if len(reps) > 1 else reps[0]
        if total == 1:
            return summed
        return self.lincomb([(1.0 / total, summed)])

    def convert_2_to_n(self, t, parties):
        return PlainTensor(t.value, self.cfg, t.scale, tuple(parties))
