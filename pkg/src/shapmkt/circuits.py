"""Generators for the boolean circuits used in-protocol.

``aes256_circuit``: inputs (256-bit key, 128-bit block), output 128-bit
ciphertext.  ``sha256_circuit``: inputs (512-bit message block, 256-bit
chaining value), output the next chaining value.  All byte strings map to
bits most-significant first, words are big-endian.

The S-box is computed as the GF(2^8) inverse x^254 (four multiplications,
squarings are linear) followed by the affine map, so its correctness
rests on field arithmetic rather than a transcribed gate list.
"""
from __future__ import annotations

import functools

from .bristol import AND, EQ, EQW, INV, XOR, BristolCircuit, make_circuit

ZERO = -1
ONE = -2


class CircuitBuilder:
    """Appends gates with constant folding; wires ``ZERO``/``ONE`` are constants."""

    def __init__(self, input_sizes):
        self.n_wires = 0
        self.kind, self.in0, self.in1, self.out = [], [], [], []
        self.input_sizes = list(input_sizes)
        self.inputs = [self._alloc(n) for n in self.input_sizes]

    def _alloc(self, n):
        ws = list(range(self.n_wires, self.n_wires + n))
        self.n_wires += n
        return ws

    def _gate(self, k, a, b=-1):
        o = self.n_wires
        self.n_wires += 1
        self.kind.append(k)
        self.in0.append(a)
        self.in1.append(b)
        self.out.append(o)
        return o

    def xor(self, a, b):
        if a == ZERO:
            return b
        if b == ZERO:
            return a
        if a == ONE:
            return self.inv(b)
        if b == ONE:
            return self.inv(a)
        if a == b:
            return ZERO
        return self._gate(XOR, a, b)

    def and_(self, a, b):
        if a == ZERO or b == ZERO:
            return ZERO
        if a == ONE:
            return b
        if b == ONE:
            return a
        if a == b:
            return a
        return self._gate(AND, a, b)

    def inv(self, a):
        if a == ZERO:
            return ONE
        if a == ONE:
            return ZERO
        return self._gate(INV, a)

    def xor_all(self, ws):
        acc = ZERO
        for w in ws:
            acc = self.xor(acc, w)
        return acc

    def finish(self, outputs) -> BristolCircuit:
        """Copy every output bit onto fresh trailing wires, as the format requires."""
        flat = [w for grp in outputs for w in grp]
        for w in flat:
            if w in (ZERO, ONE):
                self._gate(EQ, 1 if w == ONE else 0)
            else:
                self._gate(EQW, w)
        return make_circuit(
            self.n_wires, self.input_sizes, [len(g) for g in outputs], self.kind, self.in0, self.in1, self.out
        )


# -- GF(2^8) helpers: a byte is a list of 8 wires, index 0 = least significant bit


def _gf_reduce_table():
    table = []
    for p in range(15):
        v = 1 << p
        for bit in range(14, 7, -1):
            if v >> bit & 1:
                v ^= 0x11B << (bit - 8)
        table.append(v)
    return table


_RED = _gf_reduce_table()


def gf_mul(cb, a, b):
    acc = [[] for _ in range(8)]
    for i in range(8):
        for j in range(8):
            t = cb.and_(a[i], b[j])
            if t == ZERO:
                continue
            mask = _RED[i + j]
            for k in range(8):
                if mask >> k & 1:
                    acc[k].append(t)
    return [cb.xor_all(ws) for ws in acc]


def gf_square(cb, a):
    acc = [[] for _ in range(8)]
    for i in range(8):
        mask = _RED[2 * i]
        for k in range(8):
            if mask >> k & 1:
                acc[k].append(a[i])
    return [cb.xor_all(ws) for ws in acc]


def gf_inverse(cb, x):
    x2 = gf_square(cb, x)
    x3 = gf_mul(cb, x2, x)
    x12 = gf_square(cb, gf_square(cb, x3))
    x15 = gf_mul(cb, x12, x3)
    x240 = x15
    for _ in range(4):
        x240 = gf_square(cb, x240)
    x252 = gf_mul(cb, x240, x12)
    return gf_mul(cb, x252, x2)


def sbox(cb, x):
    b = gf_inverse(cb, x)
    out = []
    for i in range(8):
        w = cb.xor_all([b[i], b[(i + 4) % 8], b[(i + 5) % 8], b[(i + 6) % 8], b[(i + 7) % 8]])
        if 0x63 >> i & 1:
            w = cb.inv(w)
        out.append(w)
    return out


def xtime(cb, a):
    return [a[7], cb.xor(a[0], a[7]), a[1], cb.xor(a[2], a[7]), cb.xor(a[3], a[7]), a[4], a[5], a[6]]


def xor_bytes(cb, a, b):
    return [cb.xor(x, y) for x, y in zip(a, b)]


def const_byte(v):
    return [ONE if v >> i & 1 else ZERO for i in range(8)]


def _bytes_from_msb_wires(ws):
    """MSB-first wire list -> list of LSB-indexed bytes."""
    return [list(reversed(ws[8 * i : 8 * i + 8])) for i in range(len(ws) // 8)]


def _msb_wires_from_bytes(bs):
    return [w for b in bs for w in reversed(b)]


def _mix_column(cb, col):
    a0, a1, a2, a3 = col
    t = [xtime(cb, a) for a in col]

    def x3(i):
        return xor_bytes(cb, t[i], col[i])

    return [
        xor_bytes(cb, xor_bytes(cb, t[0], x3(1)), xor_bytes(cb, a2, a3)),
        xor_bytes(cb, xor_bytes(cb, a0, t[1]), xor_bytes(cb, x3(2), a3)),
        xor_bytes(cb, xor_bytes(cb, a0, a1), xor_bytes(cb, t[2], x3(3))),
        xor_bytes(cb, xor_bytes(cb, x3(0), a1), xor_bytes(cb, a2, t[3])),
    ]


def _aes256_key_schedule(cb, key_bytes):
    words = [key_bytes[4 * i : 4 * i + 4] for i in range(8)]
    rcon = 1
    for i in range(8, 60):
        temp = words[i - 1]
        if i % 8 == 0:
            temp = [sbox(cb, b) for b in temp[1:] + temp[:1]]
            temp = [xor_bytes(cb, temp[0], const_byte(rcon))] + temp[1:]
            rcon = (rcon << 1) ^ (0x11B if rcon & 0x80 else 0)
        elif i % 8 == 4:
            temp = [sbox(cb, b) for b in temp]
        words.append([xor_bytes(cb, x, y) for x, y in zip(words[i - 8], temp)])
    return [sum((words[4 * r + c] for c in range(4)), []) for r in range(15)]


@functools.lru_cache(maxsize=None)
def aes256_circuit() -> BristolCircuit:
    cb = CircuitBuilder([256, 128])
    key = _bytes_from_msb_wires(cb.inputs[0])
    state = _bytes_from_msb_wires(cb.inputs[1])
    round_keys = _aes256_key_schedule(cb, key)
    state = [xor_bytes(cb, s, k) for s, k in zip(state, round_keys[0])]
    for rnd in range(1, 15):
        state = [sbox(cb, b) for b in state]
        # state index = row + 4 * column
        state = [state[r + 4 * ((c + r) % 4)] for c in range(4) for r in range(4)]
        if rnd != 14:
            cols = [_mix_column(cb, state[4 * c : 4 * c + 4]) for c in range(4)]
            state = [b for col in cols for b in col]
        state = [xor_bytes(cb, s, k) for s, k in zip(state, round_keys[rnd])]
    return cb.finish([_msb_wires_from_bytes(state)])


# -- SHA-256: a word is a list of 32 wires, index 0 = least significant bit

_K = [
    0x428A2F98, 0x71374491, 0xB5C0FBCF, 0xE9B5DBA5, 0x3956C25B, 0x59F111F1, 0x923F82A4, 0xAB1C5ED5,
    0xD807AA98, 0x12835B01, 0x243185BE, 0x550C7DC3, 0x72BE5D74, 0x80DEB1FE, 0x9BDC06A7, 0xC19BF174,
    0xE49B69C1, 0xEFBE4786, 0x0FC19DC6, 0x240CA1CC, 0x2DE92C6F, 0x4A7484AA, 0x5CB0A9DC, 0x76F988DA,
    0x983E5152, 0xA831C66D, 0xB00327C8, 0xBF597FC7, 0xC6E00BF3, 0xD5A79147, 0x06CA6351, 0x14292967,
    0x27B70A85, 0x2E1B2138, 0x4D2C6DFC, 0x53380D13, 0x650A7354, 0x766A0ABB, 0x81C2C92E, 0x92722C85,
    0xA2BFE8A1, 0xA81A664B, 0xC24B8B70, 0xC76C51A3, 0xD192E819, 0xD6990624, 0xF40E3585, 0x106AA070,
    0x19A4C116, 0x1E376C08, 0x2748774C, 0x34B0BCB5, 0x391C0CB3, 0x4ED8AA4A, 0x5B9CCA4F, 0x682E6FF3,
    0x748F82EE, 0x78A5636F, 0x84C87814, 0x8CC70208, 0x90BEFFFA, 0xA4506CEB, 0xBEF9A3F7, 0xC67178F2,
]

SHA256_IV = (
    0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A, 0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19,
)


def _const_word(v):
    return [ONE if v >> i & 1 else ZERO for i in range(32)]


def _rotr(x, n):
    return [x[(i + n) % 32] for i in range(32)]


def _shr(x, n):
    return [x[i + n] if i + n < 32 else ZERO for i in range(32)]


def _xor3(cb, a, b, c):
    return [cb.xor(cb.xor(x, y), z) for x, y, z in zip(a, b, c)]


def add32(cb, a, b):
    out, carry = [], ZERO
    for i in range(32):
        axc = cb.xor(a[i], carry)
        out.append(cb.xor(axc, b[i]))
        if i < 31:
            carry = cb.xor(carry, cb.and_(axc, cb.xor(b[i], carry)))
    return out


def _words_from_msb(ws):
    return [list(reversed(ws[32 * i : 32 * i + 32])) for i in range(len(ws) // 32)]


def _msb_from_words(words):
    return [w for word in words for w in reversed(word)]


@functools.lru_cache(maxsize=None)
def sha256_circuit() -> BristolCircuit:
    cb = CircuitBuilder([512, 256])
    w = _words_from_msb(cb.inputs[0])
    h = _words_from_msb(cb.inputs[1])
    for t in range(16, 64):
        s0 = _xor3(cb, _rotr(w[t - 15], 7), _rotr(w[t - 15], 18), _shr(w[t - 15], 3))
        s1 = _xor3(cb, _rotr(w[t - 2], 17), _rotr(w[t - 2], 19), _shr(w[t - 2], 10))
        w.append(add32(cb, add32(cb, w[t - 16], s0), add32(cb, w[t - 7], s1)))
    a, b, c, d, e, f, g, hh = h
    for t in range(64):
        big_s1 = _xor3(cb, _rotr(e, 6), _rotr(e, 11), _rotr(e, 25))
        ch = [cb.xor(gi, cb.and_(ei, cb.xor(fi, gi))) for ei, fi, gi in zip(e, f, g)]
        t1 = add32(cb, add32(cb, hh, big_s1), add32(cb, ch, add32(cb, _const_word(_K[t]), w[t])))
        big_s0 = _xor3(cb, _rotr(a, 2), _rotr(a, 13), _rotr(a, 22))
        maj = [cb.xor(ai, cb.and_(cb.xor(ai, bi), cb.xor(ai, ci))) for ai, bi, ci in zip(a, b, c)]
        t2 = add32(cb, big_s0, maj)
        hh, g, f = g, f, e
        e = add32(cb, d, t1)
        d, c, b = c, b, a
        a = add32(cb, t1, t2)
    new = [add32(cb, x, y) for x, y in zip(h, [a, b, c, d, e, f, g, hh])]
    return cb.finish([_msb_from_words(new)])
