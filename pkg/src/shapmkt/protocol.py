"""End-to-end marketplace run: pre-share, train, secure valuation with
in-circuit encryption and hashing, hash-locked payment, decryption."""
from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .bristol import BitShares, bytes_to_bits
from .crypto2pc import BLOCK_BITS, NonceLog, ctr_encrypt_2pc, sha256_2pc
from .errors import ConfigError, IntegrityError, ProtocolAbort, ShapmktError
from .market import MarketScenario, gen_market, load_market
from .model import TrainConfig, build_preset, fit_normalization, forward_repr, head, load_model, sigmoid, train_utility
from .mpc import Dealer, Engine
from .payment import (
    Ledger,
    TxState,
    advance_nonce,
    decode_dataset,
    decrypt_data,
    encode_dataset,
    encrypt_data,
    hash_key,
    price_offers,
)
from .ring import FixCfg
from .secure import encode_owner, score_coalitions
from .transport import NetConfig, Network, RunStats
from .valuation import (
    EXACT_CAP,
    build_utility_dataset,
    default_mc_samples,
    loo_values,
    mc_coalitions,
    mc_permutations,
    shapley_from_table,
    shapley_mc,
    train_proxy_eval,
)

BUYER = 0


@dataclass
class ProtocolConfig:
    # scenario
    owners: int = 4
    group_size: int = 100
    noise: str = "gaussian"
    classes: int = 3
    dim: int = 10
    market_dir: str = ""
    preshare: float = 0.1
    seed: int = 0
    # utility model
    preset: str = "mlp-synthetic"
    model_path: str = ""
    label_aware: bool = False
    sds_size: int = 400
    subset_law: str = "owner-mix"
    epochs: int = 60
    inner_steps: int = 20
    # valuation
    valuation: str = "exact"
    mc_samples: int = 0
    # secure computation
    net: str = "domestic"
    bandwidth_bps: float = 100e6
    trunc_mode: str = "exact"
    ring_bits: int = 64
    frac_bits: int = 16
    block_budget: int = -1
    # payment
    price_budget: int = 1000
    deadline_blocks: int = 10
    refuse_redeem: str = ""

    def validate(self):
        if self.owners < 1:
            raise ConfigError("owners must be at least 1")
        if self.valuation not in ("exact", "mc"):
            raise ConfigError("valuation must be 'exact' or 'mc'")
        if self.valuation == "exact" and self.owners > EXACT_CAP:
            raise ConfigError(f"exact valuation supports at most {EXACT_CAP} owners; use valuation=mc")
        if not 0 < self.preshare <= 1:
            raise ConfigError("preshare must be in (0, 1]")
        if self.trunc_mode not in ("exact", "local"):
            raise ConfigError("trunc_mode must be 'exact' or 'local'")
        if self.price_budget < 0 or self.deadline_blocks < 0:
            raise ConfigError("price_budget and deadline_blocks must be non-negative")
        try:
            NetConfig.preset(self.net, self.bandwidth_bps)
            FixCfg(self.ring_bits, self.frac_bits)
        except ShapmktError as e:
            raise ConfigError(str(e)) from None
        return self

    @property
    def refusing(self) -> set:
        return {int(t) for t in self.refuse_redeem.replace(",", " ").split()}

    @classmethod
    def from_text(cls, text: str) -> "ProtocolConfig":
        """``key = value`` lines; ``#`` starts a comment."""
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for no, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = (p.strip() for p in line.partition("="))
            if not sep:
                raise ConfigError(f"line {no}: expected key = value")
            if key not in kinds:
                raise ConfigError(f"line {no}: unknown key {key!r}")
            try:
                values[key] = _coerce(kinds[key], val)
            except ValueError:
                raise ConfigError(f"line {no}: bad value {val!r} for {key}") from None
        return cls(**values).validate()

    @classmethod
    def from_file(cls, path) -> "ProtocolConfig":
        try:
            with open(path) as fh:
                return cls.from_text(fh.read())
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def _coerce(kind: str, val: str):
    if kind == "bool":
        if val.lower() in ("1", "true", "yes", "on"):
            return True
        if val.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(val)
    if kind == "int":
        return int(val)
    if kind == "float":
        return float(val)
    return val


@dataclass
class OwnerOutcome:
    sv: float
    loo: float
    offer: int = 0
    tx_id: int | None = None
    state: str = "no-offer"
    checksum_ok: bool | None = None
    crc32: int | None = None


@dataclass
class RunReport:
    owners: list
    utilities: dict
    pre_scores: dict
    loss_history: list
    noise_level: np.ndarray
    stats: RunStats | None = None
    stderr: np.ndarray | None = None
    ledger_log: str = ""
    buyer_balance: int | None = None

    @property
    def sv(self) -> np.ndarray:
        return np.array([o.sv for o in self.owners])

    @property
    def loo(self) -> np.ndarray:
        return np.array([o.loo for o in self.owners])

    def owners_csv(self) -> str:
        """owner, shapley, loo, offer, tx, state, checksum_ok"""
        rows = ["owner,shapley,loo,offer,tx,state,checksum_ok"]
        for i, o in enumerate(self.owners, 1):
            tx = "" if o.tx_id is None else o.tx_id
            ok = "" if o.checksum_ok is None else int(o.checksum_ok)
            rows.append(f"{i},{o.sv!r},{o.loo!r},{o.offer},{tx},{o.state},{ok}")
        return "\n".join(rows) + "\n"

    def summary(self) -> str:
        lines = [f"owners: {len(self.owners)}"]
        for i, o in enumerate(self.owners, 1):
            extra = "" if o.checksum_ok is None else f" data {'verified' if o.checksum_ok else 'MISMATCH'}"
            lines.append(f"  owner {i}: SV {o.sv:+.5f}  LOO {o.loo:+.5f}  offer {o.offer}  {o.state}{extra}")
        if self.stats is not None:
            for name, st in self.stats.phases.items():
                lines.append(f"  phase {name}: {st.bytes_sent} bytes, {st.rounds} rounds, {st.seconds:.3f} s")
            t = self.stats.total
            lines.append(f"  total: {t.bytes_sent} bytes, {t.rounds} rounds, {t.seconds:.3f} s simulated")
        return "\n".join(lines)


# -- shared steps


def make_scenario(cfg: ProtocolConfig) -> MarketScenario:
    if cfg.market_dir:
        return load_market(cfg.market_dir, cfg.preshare, cfg.seed)
    return gen_market(cfg.owners, cfg.group_size, cfg.noise, cfg.classes, cfg.dim, cfg.seed, cfg.preshare)


def train_model(cfg: ProtocolConfig, sc: MarketScenario):
    """Buyer side of step 1: utility dataset from pre-shared data, then training."""
    X, y, who = sc.preshared(np.random.default_rng(cfg.seed + 1))
    if cfg.model_path:
        return load_model(cfg.model_path), [], (X, y, who)
    sds = build_utility_dataset(
        X, y, sc.X_val, sc.y_val, cfg.sds_size, np.random.default_rng(cfg.seed + 2), sc.n_classes, cfg.subset_law, who
    )
    m = build_preset(cfg.preset, X.shape[1], sc.n_classes, cfg.label_aware, cfg.seed, cfg.frac_bits)
    tc = TrainConfig(epochs=cfg.epochs, inner_steps=cfg.inner_steps, seed=cfg.seed)
    m, hist = train_utility(m, X, y if cfg.label_aware else None, sds.subsets, sds.u, tc)
    return m, hist, (X, y, who)


def coalition_plan(cfg: ProtocolConfig, N: int):
    """Coalitions to score and, for MC, the sampled permutations."""
    if cfg.valuation == "exact":
        return [frozenset(c) for k in range(1, N + 1) for c in combinations(range(N), k)], None
    m = cfg.mc_samples or default_mc_samples(N)
    perms = mc_permutations(N, m, np.random.default_rng(cfg.seed + 3))
    full = frozenset(range(N))
    extra = {full} | {full - {i} for i in range(N) if N > 1}
    return sorted(set(mc_coalitions(perms)) | extra, key=lambda c: (len(c), sorted(c))), perms


def values_from_utilities(cfg: ProtocolConfig, N: int, util: dict, perms):
    def u(c):
        return util[frozenset(c)]

    if perms is None:
        table = np.array([util[frozenset(i for i in range(N) if m >> i & 1)] for m in range(1 << N)])
        sv, se = shapley_from_table(table, N), None
    else:
        sv, se = shapley_mc(u, N, perms=perms)
    return sv, se, loo_values(u, N)


# -- plaintext reference


def run_plaintext_pipeline(cfg: ProtocolConfig) -> RunReport:
    cfg.validate()
    sc = make_scenario(cfg)
    m, hist, _ = train_model(cfg, sc)
    N = sc.N
    sums = [forward_repr(m, o.X, o.y if m.label_aware else None).sum(axis=0) for o in sc.owners]
    counts = [len(o) for o in sc.owners]
    coalitions, perms = coalition_plan(cfg, N)
    pre = {}
    for c in coalitions:
        s = sum(sums[i] for i in c) / sum(counts[i] for i in c)
        pre[c] = float(head(m, s[None, :])[0])
    util = {c: float(sigmoid(z)) for c, z in pre.items()}
    util[frozenset()] = float(m.u_empty)
    sv, se, loo = values_from_utilities(cfg, N, util, perms)
    offers = price_offers(sv, cfg.price_budget)
    owners = [
        OwnerOutcome(float(v), float(l), off, state="priced" if off > 0 else "no-offer")
        for v, l, off in zip(sv, loo, offers)
    ]
    return RunReport(owners, util, pre, hist, sc.noise_level, stderr=se)


# -- secure run


def buyer_funds(cfg: ProtocolConfig, N: int) -> int:
    return cfg.price_budget + N


def _fail(phase, err, report=None):
    abort = ProtocolAbort(phase, err)
    abort.report = report
    return abort


def encrypt_in_circuit(engine: Engine, owner: int, key: bytes, nonce: bytes, blob: bytes, block_budget: int, nonces):
    """Owner's canonical bytes encrypted under its key inside 2PC with the buyer.

    Blocks beyond ``block_budget`` are encrypted locally by the owner and sent.
    """
    net, rng = engine.net, engine.rng
    parties = (BUYER, owner)
    limit = len(blob) if block_budget < 0 else min(len(blob), block_budget * BLOCK_BITS // 8)
    key_sh = BitShares.share(bytes_to_bits(key), rng, parties)
    data_sh = BitShares.share(bytes_to_bits(blob[:limit]), rng, parties)
    # owner deals the buyer's halves
    net.exchange([(owner, BUYER, 32 + limit)])
    head_ct, _ = ctr_encrypt_2pc(key_sh, nonce, data_sh, engine.dealer, net, nonces)
    digest, _ = sha256_2pc(key_sh, engine.dealer, net)
    tail = b""
    if limit < len(blob):
        tail = encrypt_data(key, blob[limit:], advance_nonce(nonce, limit // 16))
        net.exchange([(owner, BUYER, len(tail))])
    return head_ct + tail, digest


def run_protocol(cfg: ProtocolConfig, fail_party: int | None = None) -> RunReport:
    """Steps 1-5 on a simulated network.  ``fail_party`` stops responding after pre-sharing."""
    cfg.validate()
    try:
        sc = make_scenario(cfg)
    except ShapmktError as e:
        raise _fail("scenario", e) from e
    N = sc.N
    parties = tuple(range(N + 1))
    fx = FixCfg(cfg.ring_bits, cfg.frac_bits)
    net = Network(parties, NetConfig.preset(cfg.net, cfg.bandwidth_bps))
    rng = np.random.default_rng(cfg.seed + 10)
    engine = Engine(net, Dealer(np.random.default_rng(cfg.seed + 11), fx), fx, cfg.trunc_mode, rng)

    # 1. pre-share and train
    try:
        with net.phase("preshare"):
            m, hist, (Xp, _, who) = train_model(cfg, sc)
            for i in range(N):
                n_i = int(np.sum(who == i))
                net.exchange([(i + 1, BUYER, n_i * (Xp.shape[1] + 1) * 8)])
    except ShapmktError as e:
        raise _fail("preshare", e) from e
    if fail_party is not None:
        engine.fail(fail_party)

    blobs = [encode_dataset(o.X, o.y) for o in sc.owners]
    keys = [rng.bytes(32) for _ in range(N)]
    nonce_base = rng.bytes(16)
    nonces = NonceLog()
    cts, digests, sums = [], [], []

    # 2-3. per-owner 2PC: representations, ciphertext, key hash
    try:
        with net.phase("2pc"):
            for i, o in enumerate(sc.owners):
                owner = i + 1
                s = encode_owner(engine, m, o.X, o.y if m.label_aware else None, BUYER, owner)
                sums.append(s)
                # distinct nonce per owner: disjoint counter ranges of one random base
                nonce = advance_nonce(nonce_base, i << 64)
                ct, dg = encrypt_in_circuit(engine, owner, keys[i], nonce, blobs[i], cfg.block_budget, nonces)
                cts.append((nonce, ct))
                digests.append(dg)
    except ShapmktError as e:
        raise _fail("2pc", e) from e

    # 3. lift to all parties, score coalitions, open to buyer
    coalitions, perms = coalition_plan(cfg, N)
    try:
        with net.phase("mpc"):
            lifted = [engine.convert_2_to_n(s, parties) for s in sums]
            counts = [len(o) for o in sc.owners]
            pre_arr = score_coalitions(engine, m, lifted, counts, coalitions, BUYER, parties)
    except ShapmktError as e:
        raise _fail("mpc", e) from e
    pre = {c: float(z) for c, z in zip(coalitions, pre_arr)}
    util = {c: float(sigmoid(z)) for c, z in pre.items()}
    util[frozenset()] = float(m.u_empty)
    sv, se, loo = values_from_utilities(cfg, N, util, perms)

    # 4. hash-locked payment
    offers = price_offers(sv, cfg.price_budget)
    owners = [OwnerOutcome(float(v), float(l), off) for v, l, off in zip(sv, loo, offers)]
    # independent rounding can exceed the budget by up to N/2 units
    ledger = Ledger({"buyer": buyer_funds(cfg, N)})
    report = RunReport(owners, util, pre, hist, sc.noise_level, stats=None, stderr=se)
    try:
        deadline = ledger.height + cfg.deadline_blocks
        for i, out in enumerate(owners):
            if out.offer > 0:
                out.tx_id = ledger.submit_hashlock("buyer", f"owner{i + 1}", out.offer, digests[i], deadline)
                out.state = TxState.OPEN.value
        refusing = cfg.refusing
        for i, out in enumerate(owners):
            if out.tx_id is not None and (i + 1) not in refusing:
                ledger.redeem(out.tx_id, keys[i])
        ledger.advance_and_refund(cfg.deadline_blocks + 1)
    except ShapmktError as e:
        raise _fail("payment", e, report) from e

    # 5. buyer decrypts with revealed keys
    for i, out in enumerate(owners):
        if out.tx_id is None:
            continue
        tx = ledger.txs[out.tx_id]
        out.state = tx.state.value
        if tx.state is not TxState.REDEEMED:
            continue
        nonce, ct = cts[i]
        plain = decrypt_data(tx.revealed_preimage, nonce, ct)
        out.crc32 = zlib.crc32(plain)
        try:
            decode_dataset(plain)
            out.checksum_ok = plain == blobs[i]
        except IntegrityError:
            out.checksum_ok = False
    report.stats = net.collect_stats()
    report.ledger_log = ledger.export_log()
    report.buyer_balance = ledger.balance("buyer")
    return report


# -- removal experiment


def removal_curves(sc: MarketScenario, values, n_random: int = 10, seed: int = 0) -> tuple:
    """Validation accuracy after removing the t lowest / random / highest valued owners, t = 1..N-1."""
    N = sc.N
    if N < 2:
        raise ConfigError("removal curves need at least two owners")

    def acc(keep):
        X = np.concatenate([sc.owners[i].X for i in keep])
        y = np.concatenate([sc.owners[i].y for i in keep])
        return train_proxy_eval(X, y, sc.X_val, sc.y_val, sc.n_classes)

    order = np.argsort(np.asarray(values), kind="stable")
    rng = np.random.default_rng(seed)
    low = [acc(order[t:]) for t in range(1, N)]
    high = [acc(order[: N - t]) for t in range(1, N)]
    rand = np.zeros(N - 1)
    for _ in range(n_random):
        perm = rng.permutation(N)
        rand += [acc(perm[t:]) for t in range(1, N)]
    return np.array(low), rand / n_random, np.array(high)


# -- benchmark


def bench(grid, base: ProtocolConfig | None = None, presets=("domestic", "cross-border"), crypto: bool = True) -> list:
    """Cost rows for (owners, samples per owner) pairs; training is skipped (cost ignores weights)."""
    base = base or ProtocolConfig()
    rows = []
    for n_owners, samples in grid:
        row = {"owners": n_owners, "samples": samples}
        for preset in presets:
            cfg = dataclasses.replace(base, owners=n_owners, group_size=samples, net=preset, valuation="exact")
            cfg.validate()
            sc = make_scenario(cfg)
            m = build_preset(cfg.preset, cfg.dim, sc.n_classes, cfg.label_aware, cfg.seed, cfg.frac_bits)
            fit_normalization(m, np.concatenate([o.X for o in sc.owners]))
            st = _cost_run(cfg, sc, m, crypto)
            row["bytes_2pc"] = st.phase("2pc").bytes_sent
            row["bytes_2pc_per_owner"] = st.phase("2pc").bytes_sent // n_owners
            row["bytes_mpc"] = st.phase("mpc").bytes_sent
            row["rounds_mpc"] = st.phase("mpc").rounds
            row[f"seconds_{preset}"] = st.total.seconds
        rows.append(row)
    return rows


def _cost_run(cfg: ProtocolConfig, sc: MarketScenario, m, crypto: bool) -> RunStats:
    N = sc.N
    parties = tuple(range(N + 1))
    fx = FixCfg(cfg.ring_bits, cfg.frac_bits)
    net = Network(parties, NetConfig.preset(cfg.net, cfg.bandwidth_bps))
    rng = np.random.default_rng(cfg.seed + 10)
    engine = Engine(net, Dealer(np.random.default_rng(cfg.seed + 11), fx), fx, cfg.trunc_mode, rng)
    sums = []
    with net.phase("2pc"):
        for i, o in enumerate(sc.owners):
            sums.append(encode_owner(engine, m, o.X, o.y if m.label_aware else None, BUYER, i + 1))
            if crypto:
                encrypt_in_circuit(
                    engine, i + 1, rng.bytes(32), rng.bytes(16), encode_dataset(o.X, o.y), cfg.block_budget, None
                )
    coalitions, _ = coalition_plan(cfg, N)
    with net.phase("mpc"):
        lifted = [engine.convert_2_to_n(s, parties) for s in sums]
        score_coalitions(engine, m, lifted, [len(o) for o in sc.owners], coalitions, BUYER, parties)
    return net.collect_stats()


def format_bench(rows) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    return "\n".join([",".join(cols)] + [",".join(str(r[c]) for c in cols) for r in rows]) + "\n"
