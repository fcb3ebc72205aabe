"""Simulated point-to-point network with byte, round and time accounting.

Messages are never serialized; callers pass the payload (or its size in
bytes) and the router charges cost.  Messages handed to one ``exchange``
call are concurrent and form one synchronous round, numbered one past the
deepest message any of their senders had received.
"""
from __future__ import annotations

import contextlib
from collections import defaultdict
from dataclasses import dataclass, field

from .errors import ParameterError, TransportError

FRAME_BYTES = 8

PRESETS = {
    "domestic": 20.0,
    "cross-border": 120.0,
}


@dataclass(frozen=True)
class NetConfig:
    latency_ms: float = 20.0
    bandwidth_bps: float = 100e6

    def __post_init__(self):
        if self.latency_ms < 0:
            raise ParameterError("latency must be non-negative")
        if self.bandwidth_bps <= 0:
            raise ParameterError("bandwidth must be positive")

    @classmethod
    def preset(cls, name: str, bandwidth_bps: float = 100e6) -> "NetConfig":
        try:
            return cls(latency_ms=PRESETS[name], bandwidth_bps=bandwidth_bps)
        except KeyError:
            raise ParameterError(f"unknown network preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class Receipt:
    msg_id: int
    src: int
    dst: int
    payload_bytes: int
    round: int
    depart: float
    arrive: float


@dataclass
class CostStats:
    bytes_by_pair: dict = field(default_factory=lambda: defaultdict(int))
    messages: int = 0
    rounds: int = 0
    seconds: float = 0.0

    @property
    def bytes_sent(self) -> int:
        return sum(self.bytes_by_pair.values())

    def bytes_from(self, party) -> int:
        return sum(b for (s, _), b in self.bytes_by_pair.items() if s == party)

    def as_dict(self) -> dict:
        return {
            "bytes": self.bytes_sent,
            "messages": self.messages,
            "rounds": self.rounds,
            "seconds": self.seconds,
        }


@dataclass
class RunStats:
    total: CostStats
    phases: dict

    def phase(self, name) -> CostStats:
        return self.phases.get(name, CostStats())


class Network:
    """Lockstep router; ``phase`` tags every message for later partitioning."""

    def __init__(self, parties, cfg: NetConfig | None = None):
        self.cfg = cfg or NetConfig()
        self.parties = list(parties)
        self._known = set(self.parties)
        self.log: list[Receipt] = []
        self._phase_of: list[str] = []
        self._clock = {p: 0.0 for p in self.parties}
        self._depth = {p: 0 for p in self.parties}
        self._link_free = defaultdict(float)
        self._phase = "default"
        self._phase_start: dict = {}

    def register(self, party):
        if party not in self._known:
            self.parties.append(party)
            self._known.add(party)
            self._clock[party] = 0.0
            self._depth[party] = 0

    @contextlib.contextmanager
    def phase(self, name: str):
        prev, self._phase = self._phase, name
        self._phase_start.setdefault(name, self.elapsed())
        try:
            yield
        finally:
            self._phase = prev

    @property
    def current_phase(self) -> str:
        return self._phase

    def route_message(self, src, dst, payload) -> Receipt:
        return self.exchange([(src, dst, payload)])[0]

    def exchange(self, messages) -> list[Receipt]:
        """Deliver a batch of mutually independent messages."""
        receipts = []
        for src, dst, _ in messages:
            if src not in self._known or dst not in self._known:
                raise TransportError(f"unknown party in message {src!r} -> {dst!r}")
        # a batch is one synchronous round
        rnd = 1 + max((self._depth[src] for src, _, _ in messages), default=0)
        for src, dst, payload in messages:
            nbytes = payload if isinstance(payload, int) else len(payload)
            if nbytes < 0:
                raise ParameterError("negative payload size")
            start = max(self._clock[src], self._link_free[(src, dst)])
            tx = nbytes * 8 / self.cfg.bandwidth_bps
            self._link_free[(src, dst)] = start + tx
            r = Receipt(
                msg_id=len(self.log),
                src=src,
                dst=dst,
                payload_bytes=nbytes,
                round=rnd,
                depart=start,
                arrive=start + tx + self.cfg.latency_ms / 1000.0,
            )
            self.log.append(r)
            self._phase_of.append(self._phase)
            receipts.append(r)
        for r in receipts:
            self._clock[r.dst] = max(self._clock[r.dst], r.arrive)
            self._depth[r.dst] = max(self._depth[r.dst], r.round)
        return receipts

    def broadcast_all(self, parties, nbytes: int) -> list[Receipt]:
        """Every party in ``parties`` sends ``nbytes`` to every other one."""
        return self.exchange([(s, d, nbytes) for s in parties for d in parties if s != d])

    def elapsed(self) -> float:
        return max(self._clock.values(), default=0.0)

    def stats(self, phase: str | None = None, since: int = 0) -> CostStats:
        st = CostStats()
        depths = set()
        start, end = float("inf"), 0.0
        for r, ph in zip(self.log[since:], self._phase_of[since:]):
            if phase is not None and ph != phase:
                continue
            st.bytes_by_pair[(r.src, r.dst)] += r.payload_bytes + FRAME_BYTES
            st.messages += 1
            depths.add(r.round)
            start = min(start, r.depart)
            end = max(end, r.arrive)
        st.rounds = len(depths)
        if phase is None and since == 0:
            st.seconds = self.elapsed()
        elif st.messages:
            # idle parties' clocks lag; a phase starts when it is entered
            st.seconds = end - max(start, self._phase_start.get(phase, start) if since == 0 else start)
        return st

    def collect_stats(self) -> RunStats:
        names = list(dict.fromkeys(self._phase_of))
        return RunStats(total=self.stats(), phases={n: self.stats(n) for n in names})


def format_report(rows) -> str:
    """Line-delimited cost report: ``op<TAB>bytes<TAB>rounds<TAB>seconds``."""
    lines = ["op\tbytes\trounds\tseconds"]
    for op, st in rows:
        lines.append(f"{op}\t{st.bytes_sent}\t{st.rounds}\t{st.seconds:.6f}")
    return "\n".join(lines) + "\n"
