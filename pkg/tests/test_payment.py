import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shapmkt.bristol import BitShares, bytes_to_bits
from shapmkt.crypto2pc import ctr_encrypt_2pc, sha256_2pc
from shapmkt.errors import (
    DeadlineError,
    InsufficientFundsError,
    IntegrityError,
    SettledTxError,
    UnknownTxError,
)
from shapmkt.mpc import Dealer
from shapmkt.payment import (
    Ledger,
    TxState,
    decode_dataset,
    decrypt_data,
    encode_dataset,
    encrypt_data,
    hash_key,
    price_offers,
)


def test_encrypt_empty_and_round_trip():
    rng = np.random.default_rng(0)
    key, nonce = rng.bytes(32), rng.bytes(16)
    assert encrypt_data(key, b"", nonce) == b""
    data = rng.bytes(10 * 1024)
    ct = encrypt_data(key, data, nonce)
    assert ct != data and decrypt_data(key, nonce, ct) == data


def test_reference_cipher_equals_2pc_ciphertext():
    rng = np.random.default_rng(1)
    key, nonce, data = rng.bytes(32), rng.bytes(16), rng.bytes(70)
    ks = BitShares.share(bytes_to_bits(key), rng)
    ds = BitShares.share(bytes_to_bits(data), rng)
    ct, _ = ctr_encrypt_2pc(ks, nonce, ds, Dealer(rng))
    assert ct == encrypt_data(key, data, nonce)


def test_hash_key_properties():
    rng = np.random.default_rng(2)
    k = rng.bytes(32)
    assert hash_key(k) == hash_key(bytes(k)) == hashlib.sha256(k).digest()
    seen = {hash_key(rng.bytes(32)) for _ in range(10_000)}
    assert len(seen) == 10_000


def test_hash_key_matches_2pc_digest():
    rng = np.random.default_rng(3)
    for _ in range(3):
        k = rng.bytes(32)
        d, _ = sha256_2pc(BitShares.share(bytes_to_bits(k), rng), Dealer(rng))
        assert d == hash_key(k)


def test_canonical_encoding_round_trip_and_wrong_key():
    rng = np.random.default_rng(4)
    X, y = rng.normal(size=(7, 3)), rng.integers(0, 4, 7)
    blob = encode_dataset(X, y)
    X2, y2 = decode_dataset(blob)
    assert np.array_equal(X, X2) and np.array_equal(y, y2)
    assert decode_dataset(encode_dataset(X))[1] is None
    key, nonce = rng.bytes(32), rng.bytes(16)
    ct = encrypt_data(key, blob, nonce)
    with pytest.raises(IntegrityError):
        decode_dataset(decrypt_data(rng.bytes(32), nonce, ct))


def test_canonical_encoding_detects_bit_flip():
    blob = bytearray(encode_dataset(np.ones((2, 2)), [0, 1]))
    blob[-3] ^= 1
    with pytest.raises(IntegrityError):
        decode_dataset(bytes(blob))


def funded(amount=100):
    led = Ledger({"buyer": amount})
    return led


def test_submit_examples():
    led = funded(10)
    led.submit_hashlock("buyer", "o1", 0, hash_key(b"k" * 32), 5)
    with pytest.raises(InsufficientFundsError):
        led.submit_hashlock("buyer", "o1", 15, hash_key(b"k" * 32), 5)
    led.submit_hashlock("buyer", "o1", 3, hash_key(b"a" * 32), 5)
    led.submit_hashlock("buyer", "o2", 4, hash_key(b"b" * 32), 5)
    assert led.balance("buyer") == 3


def test_redeem_examples():
    key = bytes(range(32))
    led = funded()
    tx = led.submit_hashlock("buyer", "o1", 40, hash_key(key), 3)
    bad = bytes([key[0] ^ 1]) + key[1:]
    assert led.redeem(tx, bad) is False
    assert led.txs[tx].state is TxState.OPEN
    assert led.redeem(tx, key) is True
    assert led.txs[tx].state is TxState.REDEEMED
    assert led.balance("o1") == 40 and led.preimage_of(tx) == key
    with pytest.raises(SettledTxError):
        led.redeem(tx, key)
    with pytest.raises(UnknownTxError):
        led.redeem(99, key)


def test_deadline_is_inclusive():
    key = b"\x01" * 32
    led = funded()
    a = led.submit_hashlock("buyer", "o1", 1, hash_key(key), 2)
    b = led.submit_hashlock("buyer", "o2", 1, hash_key(key), 2)
    led.height = 2
    assert led.redeem(a, key)
    led.height = 3
    with pytest.raises(DeadlineError):
        led.redeem(b, key)


def test_advance_and_refund():
    key = b"\x02" * 32
    led = funded()
    assert led.advance_and_refund(1) == []
    a = led.submit_hashlock("buyer", "o1", 30, hash_key(key), 2)
    b = led.submit_hashlock("buyer", "o2", 20, hash_key(key), 2)
    led.redeem(a, key)
    assert led.advance_and_refund(1) == []
    assert led.advance_and_refund(1) == [b]
    assert led.txs[a].state is TxState.REDEEMED
    assert led.balance("buyer") == 70 and led.balance("o1") == 30


def test_log_export():
    key = b"\x03" * 32
    led = funded()
    tx = led.submit_hashlock("buyer", "o1", 5, hash_key(key), 1)
    led.redeem(tx, key)
    lines = led.export_log().splitlines()
    assert lines[0].split("\t") == ["height", "tx", "event", "amount", "hash", "preimage"]
    assert lines[2].split("\t")[2] == "redeem" and lines[2].endswith(key.hex())


def test_price_offers():
    assert price_offers([0.3, 0.1, -0.2], 100) == [75, 25, 0]
    assert price_offers([-1.0, 0.0], 100) == [0, 0]
    assert price_offers([], 10) == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["submit", "redeem", "bad", "advance"]), st.integers(0, 5)), max_size=30))
def test_conservation_and_lock_soundness(ops):
    keys = [bytes([i]) * 32 for i in range(6)]
    led = Ledger({"buyer": 1000})
    for op, i in ops:
        if op == "submit" and led.balance("buyer") >= 10:
            led.submit_hashlock("buyer", f"o{i}", 10, hash_key(keys[i]), led.height + i % 3)
        elif op in ("redeem", "bad") and i in led.txs:
            tx = led.txs[i]
            if tx.state is TxState.OPEN and led.height <= tx.deadline_height:
                key = keys[int(tx.payee[1:])]
                ok = led.redeem(i, key if op == "redeem" else key[::-1] + b"x")
                assert ok == (op == "redeem")
        elif op == "advance":
            led.advance_and_refund(1 + i % 2)
        escrow = sum(t.amount for t in led.txs.values() if t.state is TxState.OPEN)
        assert sum(led.balances.values()) + escrow == 1000
        assert all(v >= 0 for v in led.balances.values())
    for t in led.txs.values():
        if t.state is TxState.REDEEMED:
            assert hash_key(t.revealed_preimage) == t.lock_hash
