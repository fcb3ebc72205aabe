"""AES-256-CTR and SHA-256 run inside the two-party boolean evaluator.

In every call ``parties = (buyer, owner)``.  Results are opened to the
buyer only: the owner sends its XOR share, the buyer adds its own.
"""
from __future__ import annotations

import numpy as np

from .bristol import BitShares, Eval2PCStats, eval_2pc
from .circuits import SHA256_IV, aes256_circuit, sha256_circuit
from .errors import NonceReuseError, ParameterError
from .transport import Network

BLOCK_BITS = 128


def _int_bits(v: int, nbits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(v.to_bytes(nbits // 8, "big"), dtype=np.uint8))


def counter_blocks(nonce: bytes, start: int, count: int) -> np.ndarray:
    """Bits of (nonce + j) mod 2^128 for j in [start, start + count)."""
    if len(nonce) != 16:
        raise ParameterError("nonce must be 16 bytes")
    base = int.from_bytes(nonce, "big")
    rows = [_int_bits((base + j) % (1 << 128), 128) for j in range(start, start + count)]
    return np.stack(rows) if rows else np.zeros((0, 128), dtype=np.uint8)


def _open_to_buyer(sh: BitShares, net: Network | None) -> np.ndarray:
    if net is not None:
        buyer, owner = sh.parties
        net.exchange([(owner, buyer, (sh.p1.size + 7) // 8)])
    return sh.reveal()


def _merge(total: Eval2PCStats, st: Eval2PCStats):
    total.and_gates += st.and_gates
    total.rounds += st.rounds
    total.payload_bits += st.payload_bits
    total.payload_bytes += st.payload_bytes
    total.messages += st.messages


class NonceLog:
    """Nonces already used in one protocol run."""

    def __init__(self):
        self._seen = set()

    def claim(self, nonce: bytes):
        if bytes(nonce) in self._seen:
            raise NonceReuseError(f"nonce {bytes(nonce).hex()} already used in this run")
        self._seen.add(bytes(nonce))


def ctr_encrypt_2pc(
    key: BitShares,
    nonce: bytes,
    data: BitShares,
    dealer,
    net: Network | None = None,
    nonces: NonceLog | None = None,
    counter_start: int = 0,
) -> tuple:
    """Encrypt shared ``data`` bits under the shared 256-bit key; returns (ciphertext bytes, stats).

    Data of any whole-byte length is accepted; the last keystream block is
    cut to size.
    """
    if key.p0.shape != (256,):
        raise ParameterError("key must be 256 shared bits")
    if data.p0.ndim != 1 or data.p0.size % 8:
        raise ParameterError("data must be a whole number of bytes")
    if nonces is not None:
        nonces.claim(nonce)
    st = Eval2PCStats()
    nbits = data.p0.size
    if nbits == 0:
        return b"", st
    nblocks = -(-nbits // BLOCK_BITS)
    ctr = BitShares.public(counter_blocks(nonce, counter_start, nblocks), key.parties)
    keys = BitShares(np.tile(key.p0, (nblocks, 1)), np.tile(key.p1, (nblocks, 1)), key.parties)
    (ks,), est = eval_2pc(aes256_circuit(), [keys, ctr], dealer, net, key.parties)
    _merge(st, est)
    ct = BitShares(
        data.p0 ^ ks.p0.reshape(-1)[:nbits],
        data.p1 ^ ks.p1.reshape(-1)[:nbits],
        key.parties,
    )
    bits = _open_to_buyer(ct, net)
    return np.packbits(bits).tobytes(), st


def sha256_padding_bits(msg_bits: int) -> np.ndarray:
    """Padding appended to a message of ``msg_bits`` bits (single block only)."""
    if msg_bits > 447:
        raise ParameterError("single-block padding needs at most 447 message bits")
    pad = np.zeros(512 - msg_bits, dtype=np.uint8)
    pad[0] = 1
    pad[-64:] = _int_bits(msg_bits, 64)
    return pad


SHA256_IV_BITS = np.concatenate([_int_bits(v, 32) for v in SHA256_IV])


def sha256_2pc(key: BitShares, dealer, net: Network | None = None) -> tuple:
    """Digest of the shared key bits (one padded block); returns (digest bytes, stats)."""
    if key.p0.ndim != 1:
        raise ParameterError("message must be a bit vector")
    pad = BitShares.public(sha256_padding_bits(key.p0.size), key.parties)
    block = BitShares.concat([key, pad])
    iv = BitShares.public(SHA256_IV_BITS, key.parties)
    (digest,), st = eval_2pc(sha256_circuit(), [block, iv], dealer, net, key.parties)
    return np.packbits(_open_to_buyer(digest, net)).tobytes(), st
