"""Bristol Fashion circuits: parsing, serialization and evaluation.

Evaluation is bit-sliced across a batch: every wire holds the packed bits
of all instances (``uint8`` rows), so one numpy operation handles a whole
group of independent gates.  Gates are scheduled by AND depth; in the
two-party evaluator each AND layer costs exactly one exchange round.

Bit order convention for byte-oriented helpers: most significant bit first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import CircuitParseError, CircuitValidationError, ParameterError, UnsupportedGateError
from .transport import Network

XOR, AND, INV, EQ, EQW = range(5)
KIND_NAMES = ("XOR", "AND", "INV", "EQ", "EQW")
_KIND_OF = {name: i for i, name in enumerate(KIND_NAMES)}
_ARITY = {XOR: 2, AND: 2, INV: 1, EQ: 1, EQW: 1}


@dataclass(frozen=True, eq=False)
class BristolCircuit:
    n_gates: int
    n_wires: int
    inputs: tuple
    outputs: tuple
    kind: np.ndarray
    in0: np.ndarray  # EQ gates store their constant here
    in1: np.ndarray  # -1 for unary gates
    out: np.ndarray

    @property
    def n_inputs(self) -> int:
        return sum(self.inputs)

    @property
    def n_outputs(self) -> int:
        return sum(self.outputs)

    @cached_property
    def gate_counts(self) -> dict:
        counts = np.bincount(self.kind, minlength=len(KIND_NAMES))
        return {name: int(c) for name, c in zip(KIND_NAMES, counts)}

    @property
    def and_count(self) -> int:
        return self.gate_counts["AND"]

    @cached_property
    def schedule(self) -> list:
        return _build_schedule(self)

    @property
    def and_depth(self) -> int:
        return sum(1 for step in self.schedule if step[0] == AND)

    def gates(self):
        """Iterate gates as ``(nin, nout, inputs, out, kind_name)`` tuples."""
        for k, a, b, o in zip(self.kind.tolist(), self.in0.tolist(), self.in1.tolist(), self.out.tolist()):
            ins = (a, b) if _ARITY[k] == 2 else (a,)
            yield (_ARITY[k], 1, ins, o, KIND_NAMES[k])

    def stats(self) -> dict:
        return {
            "gates": self.n_gates,
            "wires": self.n_wires,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            **self.gate_counts,
            "and_depth": self.and_depth,
        }


def _validate(c: BristolCircuit):
    if len(c.kind) != c.n_gates:
        raise CircuitValidationError(f"header declares {c.n_gates} gates, body has {len(c.kind)}")
    n_in = c.n_inputs
    if n_in > c.n_wires or c.n_outputs > c.n_wires:
        raise CircuitValidationError("more input/output wires than wires")
    assigned = np.zeros(c.n_wires, dtype=bool)
    assigned[:n_in] = True
    for g, (k, a, b, o) in enumerate(zip(c.kind.tolist(), c.in0.tolist(), c.in1.tolist(), c.out.tolist())):
        if not 0 <= o < c.n_wires:
            raise CircuitValidationError(f"gate {g}: output wire {o} outside [0, {c.n_wires})")
        ins = () if k == EQ else ((a, b) if _ARITY[k] == 2 else (a,))
        for w in ins:
            if not 0 <= w < c.n_wires:
                raise CircuitValidationError(f"gate {g}: input wire {w} outside [0, {c.n_wires})")
            if not assigned[w]:
                raise CircuitValidationError(f"gate {g}: wire {w} used before it is assigned")
        if k == EQ and a not in (0, 1):
            raise CircuitValidationError(f"gate {g}: EQ constant must be 0 or 1")
        if assigned[o]:
            raise CircuitValidationError(f"gate {g}: wire {o} assigned twice")
        assigned[o] = True
    first_out = c.n_wires - c.n_outputs
    if not assigned[first_out:].all():
        raise CircuitValidationError("an output wire is never assigned")


def make_circuit(n_wires, inputs, outputs, kind, in0, in1, out) -> BristolCircuit:
    c = BristolCircuit(
        n_gates=len(kind),
        n_wires=int(n_wires),
        inputs=tuple(int(i) for i in inputs),
        outputs=tuple(int(o) for o in outputs),
        kind=np.asarray(kind, dtype=np.uint8),
        in0=np.asarray(in0, dtype=np.int64),
        in1=np.asarray(in1, dtype=np.int64),
        out=np.asarray(out, dtype=np.int64),
    )
    _validate(c)
    return c


def parse_bristol(text: str) -> BristolCircuit:
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    lines = [(no, toks) for no, toks in lines if toks]
    if len(lines) < 3:
        raise CircuitParseError("missing header lines", line=len(lines) + 1)

    def ints(no, toks):
        try:
            return [int(t) for t in toks]
        except ValueError:
            raise CircuitParseError(f"expected integers, got {' '.join(toks)!r}", line=no) from None

    (no1, t1), (no2, t2), (no3, t3) = lines[:3]
    head = ints(no1, t1)
    if len(head) != 2:
        raise CircuitParseError("header must be '<gates> <wires>'", line=no1)
    n_gates, n_wires = head
    groups = []
    for no, toks in ((no2, t2), (no3, t3)):
        vals = ints(no, toks)
        if not vals or len(vals) != vals[0] + 1:
            raise CircuitParseError("group line must be '<count> <w_1> ... <w_count>'", line=no)
        groups.append(vals[1:])

    kind, in0, in1, out = [], [], [], []
    for no, toks in lines[3:]:
        name = toks[-1]
        if name not in _KIND_OF:
            raise UnsupportedGateError(f"unsupported gate kind {name!r}", line=no)
        nums = ints(no, toks[:-1])
        if len(nums) < 2:
            raise CircuitParseError("gate line too short", line=no)
        nin, nout = nums[0], nums[1]
        k = _KIND_OF[name]
        if nin != _ARITY[k] or nout != 1 or len(nums) != 2 + nin + nout:
            raise CircuitParseError(f"malformed {name} gate", line=no)
        kind.append(k)
        in0.append(nums[2])
        in1.append(nums[3] if nin == 2 else -1)
        out.append(nums[-1])
    if len(kind) != n_gates:
        raise CircuitValidationError(f"header declares {n_gates} gates, body has {len(kind)}")
    return make_circuit(n_wires, groups[0], groups[1], kind, in0, in1, out)


def load_bristol(path) -> BristolCircuit:
    with open(path) as fh:
        return parse_bristol(fh.read())


def serialize_bristol(c: BristolCircuit) -> str:
    out = [
        f"{c.n_gates} {c.n_wires}",
        " ".join(str(x) for x in (len(c.inputs), *c.inputs)),
        " ".join(str(x) for x in (len(c.outputs), *c.outputs)),
        "",
    ]
    for nin, nout, ins, o, name in c.gates():
        out.append(" ".join(str(x) for x in (nin, nout, *ins, o)) + f" {name}")
    return "\n".join(out) + "\n"


def _build_schedule(c: BristolCircuit) -> list:
    """Group gates into steps: per AND layer, the ANDs then levels of local gates."""
    depth = [0] * c.n_wires
    level = [0] * c.n_wires
    g_depth = [0] * c.n_gates
    g_level = [0] * c.n_gates
    for g, (k, a, b, o) in enumerate(zip(c.kind.tolist(), c.in0.tolist(), c.in1.tolist(), c.out.tolist())):
        if k == AND:
            d, lv = 1 + max(depth[a], depth[b]), 0
        elif k == EQ:
            d, lv = 0, 1
        elif k == XOR:
            d = max(depth[a], depth[b])
            lv = 1 + max(level[a] if depth[a] == d else 0, level[b] if depth[b] == d else 0)
        else:
            d, lv = depth[a], 1 + level[a]
        depth[o], level[o] = d, lv
        g_depth[g], g_level[g] = d, lv
    g_depth = np.asarray(g_depth, dtype=np.int64)
    g_level = np.asarray(g_level, dtype=np.int64)
    steps = []
    order = np.lexsort((c.kind, g_level, g_depth))
    kinds = c.kind[order]
    keys = np.stack([g_depth[order], g_level[order], kinds], axis=1)
    if len(order) == 0:
        return steps
    breaks = np.flatnonzero(np.any(keys[1:] != keys[:-1], axis=1)) + 1
    for chunk in np.split(np.arange(len(order)), breaks):
        idx = order[chunk]
        k = int(c.kind[idx[0]])
        steps.append((k, c.in0[idx], c.in1[idx], c.out[idx]))
    return steps


def _pack(bits_list, group_sizes):
    """List of (batch, n) 0/1 arrays -> packed wire rows (n_total, nbytes), batch."""
    arrs = []
    batch = None
    for bits, size in zip(bits_list, group_sizes):
        b = np.asarray(bits, dtype=np.uint8)
        if b.ndim == 1:
            b = b[None, :]
        if b.shape[1] != size:
            raise ParameterError(f"input group expects {size} bits, got {b.shape[1]}")
        if batch is None:
            batch = b.shape[0]
        elif b.shape[0] != batch:
            raise ParameterError("input groups have different batch sizes")
        arrs.append(b)
    if len(arrs) != len(group_sizes):
        raise ParameterError(f"circuit expects {len(group_sizes)} input groups, got {len(arrs)}")
    full = np.concatenate(arrs, axis=1) if arrs else np.zeros((batch or 1, 0), np.uint8)
    return np.packbits(full.T, axis=1), batch


def _unpack(rows, batch, group_sizes, squeeze):
    bits = np.unpackbits(rows, axis=1, count=batch).T
    out, pos = [], 0
    for size in group_sizes:
        part = bits[:, pos : pos + size]
        out.append(part[0] if squeeze else part)
        pos += size
    return out


def _apply_local(k, a, b, o, w, first_party=True):
    if k == XOR:
        w[o] = w[a] ^ w[b]
    elif k == INV:
        w[o] = ~w[a] if first_party else w[a]
    elif k == EQ:
        w[o] = np.where((a[:, None] == 1) & first_party, np.uint8(0xFF), np.uint8(0))
    elif k == EQW:
        w[o] = w[a]


def eval_plain(c: BristolCircuit, inputs) -> list:
    """Evaluate on cleartext bits; each input is (n,) or (batch, n) 0/1."""
    squeeze = all(np.ndim(x) == 1 for x in inputs)
    rows, batch = _pack(inputs, c.inputs)
    w = np.zeros((c.n_wires, rows.shape[1]), dtype=np.uint8)
    w[: c.n_inputs] = rows
    for k, a, b, o in c.schedule:
        if k == AND:
            w[o] = w[a] & w[b]
        else:
            _apply_local(k, a, b, o, w)
    return _unpack(w[c.n_wires - c.n_outputs :], batch, c.outputs, squeeze)


@dataclass
class BitShares:
    """XOR sharing of a bit matrix (batch, n) between two parties."""

    p0: np.ndarray
    p1: np.ndarray
    parties: tuple = (0, 1)

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=np.uint8)
        self.p1 = np.asarray(self.p1, dtype=np.uint8)
        if self.p0.shape != self.p1.shape:
            raise ParameterError("both parties must hold equally long bit vectors")

    def reveal(self) -> np.ndarray:
        return self.p0 ^ self.p1

    @classmethod
    def share(cls, bits, rng: np.random.Generator, parties=(0, 1)) -> "BitShares":
        bits = np.asarray(bits, dtype=np.uint8)
        r = rng.integers(0, 2, size=bits.shape, dtype=np.uint8)
        return cls(r, bits ^ r, tuple(parties))

    @classmethod
    def public(cls, bits, parties=(0, 1)) -> "BitShares":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(bits, np.zeros_like(bits), tuple(parties))

    @classmethod
    def concat(cls, shares, axis=-1) -> "BitShares":
        return cls(
            np.concatenate([s.p0 for s in shares], axis=axis),
            np.concatenate([s.p1 for s in shares], axis=axis),
            shares[0].parties,
        )


@dataclass
class Eval2PCStats:
    and_gates: int = 0
    rounds: int = 0
    payload_bits: int = 0
    payload_bytes: int = 0
    messages: int = 0
    extra: dict = field(default_factory=dict)


def eval_2pc(c: BristolCircuit, inputs, dealer, net: Network | None = None, parties=None) -> tuple:
    """GMW-style evaluation over XOR shares; returns (output BitShares list, stats).

    XOR/INV/EQ/EQW are local.  Each AND layer opens d = x^a and e = y^b:
    both parties send 2 bits per AND per instance to each other.
    """
    if parties is None:
        parties = inputs[0].parties if inputs else (0, 1)
    squeeze = all(s.p0.ndim == 1 for s in inputs)
    rows0, batch = _pack([s.p0 for s in inputs], c.inputs)
    rows1, _ = _pack([s.p1 for s in inputs], c.inputs)
    nbytes = rows0.shape[1]
    w0 = np.zeros((c.n_wires, nbytes), dtype=np.uint8)
    w1 = np.zeros((c.n_wires, nbytes), dtype=np.uint8)
    w0[: c.n_inputs] = rows0
    w1[: c.n_inputs] = rows1
    st = Eval2PCStats()
    for k, a, b, o in c.schedule:
        if k != AND:
            _apply_local(k, a, b, o, w0, True)
            _apply_local(k, a, b, o, w1, False)
            continue
        n_and = len(o)
        (a0, a1), (b0, b1), (c0, c1) = dealer.bool_triples(n_and, nbytes, batch)
        d = (w0[a] ^ a0) ^ (w1[a] ^ a1)
        e = (w0[b] ^ b0) ^ (w1[b] ^ b1)
        w0[o] = c0 ^ (d & b0) ^ (e & a0) ^ (d & e)
        w1[o] = c1 ^ (d & b1) ^ (e & a1)
        bits = 2 * n_and * batch
        nb = (bits + 7) // 8
        st.and_gates += n_and
        st.rounds += 1
        st.payload_bits += 2 * bits
        st.payload_bytes += 2 * nb
        st.messages += 2
        if net is not None:
            net.exchange([(parties[0], parties[1], nb), (parties[1], parties[0], nb)])
    lo = c.n_wires - c.n_outputs
    o0 = _unpack(w0[lo:], batch, c.outputs, squeeze)
    o1 = _unpack(w1[lo:], batch, c.outputs, squeeze)
    return [BitShares(x, y, tuple(parties)) for x, y in zip(o0, o1)], st


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def bits_to_bytes(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), axis=-1).tobytes()
