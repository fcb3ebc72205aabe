"""Reference AES-256-CTR / SHA-256, canonical dataset bytes, and a hash-locked ledger."""
from __future__ import annotations

import enum
import hashlib
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import (
    DeadlineError,
    InsufficientFundsError,
    IntegrityError,
    ParameterError,
    SettledTxError,
    UnknownTxError,
)

MAGIC = b"SMDS"
_HEAD = struct.Struct(">4sII")
_SHAPE = struct.Struct(">IIB")


def _check_key(key: bytes, nonce: bytes):
    if len(key) != 32:
        raise ParameterError("AES-256 needs a 32-byte key")
    if len(nonce) != 16:
        raise ParameterError("nonce must be 16 bytes")


def encrypt_data(key: bytes, data: bytes, nonce: bytes) -> bytes:
    _check_key(key, nonce)
    enc = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()
    return enc.update(bytes(data)) + enc.finalize()


def decrypt_data(key: bytes, nonce: bytes, ct: bytes) -> bytes:
    # CTR is an involution
    return encrypt_data(key, ct, nonce)


def advance_nonce(nonce: bytes, blocks: int) -> bytes:
    """Counter block reached after ``blocks`` blocks of keystream."""
    v = (int.from_bytes(nonce, "big") + blocks) % (1 << 128)
    return v.to_bytes(16, "big")


def hash_key(key: bytes) -> bytes:
    return hashlib.sha256(bytes(key)).digest()


def encode_dataset(X, y=None) -> bytes:
    """Canonical bytes: magic, payload length, CRC32, then shapes and big-endian values."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    payload = _SHAPE.pack(n, d, y is not None) + X.astype(">f8").tobytes()
    if y is not None:
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if len(y) != n:
            raise ParameterError("label count differs from sample count")
        payload += y.astype(">i8").tobytes()
    return _HEAD.pack(MAGIC, len(payload), zlib.crc32(payload)) + payload


def decode_dataset(blob: bytes) -> tuple:
    if len(blob) < _HEAD.size:
        raise IntegrityError("too short for a dataset header")
    magic, length, crc = _HEAD.unpack_from(blob)
    payload = blob[_HEAD.size :]
    if magic != MAGIC:
        raise IntegrityError("bad magic; wrong key or corrupted ciphertext")
    if length != len(payload) or zlib.crc32(payload) != crc:
        raise IntegrityError("length or checksum mismatch")
    n, d, has_y = _SHAPE.unpack_from(payload)
    off = _SHAPE.size
    X = np.frombuffer(payload, dtype=">f8", count=n * d, offset=off).astype(np.float64).reshape(n, d)
    y = None
    if has_y:
        y = np.frombuffer(payload, dtype=">i8", count=n, offset=off + 8 * n * d).astype(np.int64)
    return X, y


def price_offers(values, budget: int) -> list:
    """max(0, round(budget * v_i / sum of positive v_j)); non-positive values get nothing."""
    v = np.maximum(np.asarray(values, dtype=np.float64), 0.0)
    total = v.sum()
    if total <= 0:
        return [0] * len(v)
    return [int(round(budget * x / total)) for x in v]


class TxState(enum.Enum):
    OPEN = "Open"
    REDEEMED = "Redeemed"
    REFUNDED = "Refunded"


@dataclass
class HashLockTx:
    id: int
    payer: str
    payee: str
    amount: int
    lock_hash: bytes
    deadline_height: int
    state: TxState = TxState.OPEN
    revealed_preimage: bytes | None = None


@dataclass(frozen=True)
class LogRecord:
    height: int
    tx_id: int
    event: str
    amount: int
    lock_hash: bytes
    preimage: bytes | None

    def line(self) -> str:
        pre = self.preimage.hex() if self.preimage is not None else "-"
        return f"{self.height}\t{self.tx_id}\t{self.event}\t{self.amount}\t{self.lock_hash.hex()}\t{pre}"


class Ledger:
    """Single-writer escrow state machine; the deadline height is inclusive."""

    def __init__(self, balances: dict | None = None):
        self.height = 0
        self.balances = dict(balances or {})
        self.txs: dict[int, HashLockTx] = {}
        self.log: list[LogRecord] = []

    def balance(self, account) -> int:
        return self.balances.get(account, 0)

    def deposit(self, account, amount: int):
        if amount < 0:
            raise ParameterError("deposit must be non-negative")
        self.balances[account] = self.balance(account) + int(amount)

    def _record(self, tx: HashLockTx, event: str, preimage=None):
        self.log.append(LogRecord(self.height, tx.id, event, tx.amount, tx.lock_hash, preimage))

    def _get(self, tx_id) -> HashLockTx:
        try:
            return self.txs[tx_id]
        except KeyError:
            raise UnknownTxError(f"no transaction {tx_id}") from None

    def submit_hashlock(self, payer, payee, amount: int, lock_hash: bytes, deadline_height: int) -> int:
        amount = int(amount)
        if amount < 0:
            raise ParameterError("amount must be non-negative")
        if len(lock_hash) != 32:
            raise ParameterError("lock hash must be 32 bytes")
        if deadline_height < self.height:
            raise ParameterError("deadline already passed")
        if self.balance(payer) < amount:
            raise InsufficientFundsError(f"{payer} holds {self.balance(payer)}, needs {amount}")
        self.balances[payer] = self.balance(payer) - amount
        tx = HashLockTx(len(self.txs), payer, payee, amount, bytes(lock_hash), int(deadline_height))
        self.txs[tx.id] = tx
        self._record(tx, "submit")
        return tx.id

    def redeem(self, tx_id, preimage: bytes) -> bool:
        tx = self._get(tx_id)
        if tx.state is not TxState.OPEN:
            raise SettledTxError(f"transaction {tx_id} is already {tx.state.value}")
        if self.height > tx.deadline_height:
            raise DeadlineError(f"height {self.height} is past deadline {tx.deadline_height}")
        if hashlib.sha256(bytes(preimage)).digest() != tx.lock_hash:
            return False
        tx.state = TxState.REDEEMED
        tx.revealed_preimage = bytes(preimage)
        self.balances[tx.payee] = self.balance(tx.payee) + tx.amount
        self._record(tx, "redeem", tx.revealed_preimage)
        return True

    def advance_and_refund(self, blocks: int = 1) -> list:
        if blocks < 1:
            raise ParameterError("must advance at least one block")
        self.height += blocks
        refunded = []
        for tx in self.txs.values():
            if tx.state is TxState.OPEN and tx.deadline_height < self.height:
                tx.state = TxState.REFUNDED
                self.balances[tx.payer] = self.balance(tx.payer) + tx.amount
                self._record(tx, "refund")
                refunded.append(tx.id)
        return refunded

    def preimage_of(self, tx_id) -> bytes | None:
        return self._get(tx_id).revealed_preimage

    def export_log(self) -> str:
        head = "height\ttx\tevent\tamount\thash\tpreimage"
        return "\n".join([head] + [r.line() for r in self.log]) + "\n"
