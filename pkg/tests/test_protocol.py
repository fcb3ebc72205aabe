import dataclasses
import zlib

import numpy as np
import pytest

from shapmkt.errors import ConfigError, ProtocolAbort
from shapmkt.market import gen_market
from shapmkt.payment import encode_dataset
from shapmkt.protocol import (
    ProtocolConfig,
    bench,
    buyer_funds,
    format_bench,
    removal_curves,
    run_plaintext_pipeline,
    run_protocol,
)
from shapmkt.valuation import effectiveness_score

SMALL = ProtocolConfig(owners=3, group_size=30, epochs=10, sds_size=60)


@pytest.fixture(scope="module")
def secure_run():
    return run_protocol(SMALL)


def test_config_text_round_trip_and_errors():
    cfg = ProtocolConfig.from_text("owners = 5  # comment\nvaluation = mc\nlabel_aware = yes\npreshare=0.2\n")
    assert cfg.owners == 5 and cfg.valuation == "mc" and cfg.label_aware and cfg.preshare == 0.2
    assert ProtocolConfig.from_text(cfg.to_text()) == cfg
    for bad in ("owners 5", "colour = red", "owners = many", "valuation = guess", "owners = 13", "net = mars"):
        with pytest.raises(ConfigError):
            ProtocolConfig.from_text(bad)
    with pytest.raises(ConfigError):
        ProtocolConfig.from_file("/nonexistent/cfg")


def test_protocol_matches_plaintext(secure_run):
    plain = run_plaintext_pipeline(SMALL)
    assert np.max(np.abs(secure_run.sv - plain.sv)) < 1e-3
    assert np.max(np.abs(secure_run.loo - plain.loo)) < 1e-3
    assert len(secure_run.utilities) == 8


def test_redeemed_owners_deliver_their_data(secure_run):
    ledger = secure_run.ledger_log.splitlines()
    redeemed = {int(ln.split("\t")[1]) for ln in ledger[1:] if ln.split("\t")[2] == "redeem"}
    for o in secure_run.owners:
        if o.offer > 0:
            assert o.state == "Redeemed" and o.tx_id in redeemed and o.checksum_ok
        else:
            assert o.state == "no-offer" and o.tx_id is None
    assert any(o.offer > 0 for o in secure_run.owners)
    paid = sum(o.offer for o in secure_run.owners if o.state == "Redeemed")
    assert secure_run.buyer_balance == buyer_funds(SMALL, 3) - paid


def test_phase_costs(secure_run):
    st = secure_run.stats
    assert set(st.phases) == {"preshare", "2pc", "mpc"}
    assert sum(p.bytes_sent for p in st.phases.values()) == st.total.bytes_sent
    assert st.phase("2pc").bytes_sent > st.phase("mpc").bytes_sent > 0


def test_single_owner():
    cfg = dataclasses.replace(SMALL, owners=1, group_size=200)
    rep = run_protocol(cfg)
    (o,) = rep.owners
    assert o.sv == pytest.approx(rep.utilities[frozenset({0})] - rep.utilities[frozenset()])
    assert o.state == "Redeemed" and o.checksum_ok


def test_refusing_owner_is_refunded():
    cfg = dataclasses.replace(SMALL, refuse_redeem="1 2 3")
    rep = run_protocol(cfg)
    assert all(o.state in ("Refunded", "no-offer") for o in rep.owners)
    assert all(o.checksum_ok is None for o in rep.owners)
    assert rep.buyer_balance == buyer_funds(cfg, 3)
    assert "redeem" not in rep.ledger_log


def test_failed_party_aborts_with_phase():
    with pytest.raises(ProtocolAbort) as exc:
        run_protocol(SMALL, fail_party=2)
    assert exc.value.phase == "2pc"
    assert str(exc.value).startswith("[2pc]")


def test_block_budget_tail_encrypted_locally():
    cfg = dataclasses.replace(SMALL, block_budget=4)
    full = run_protocol(SMALL)
    cut = run_protocol(cfg)
    assert [o.checksum_ok for o in cut.owners] == [o.checksum_ok for o in full.owners]
    assert cut.stats.phase("2pc").bytes_sent < full.stats.phase("2pc").bytes_sent
    assert np.array_equal(cut.sv, full.sv)


def test_same_seed_identical_reports():
    a, b = run_plaintext_pipeline(SMALL), run_plaintext_pipeline(SMALL)
    assert a.owners == b.owners and a.utilities == b.utilities


def test_mc_mode_close_to_exact():
    cfg = ProtocolConfig(owners=6, group_size=30, epochs=10, sds_size=60)
    exact = run_plaintext_pipeline(cfg)
    mc = run_plaintext_pipeline(dataclasses.replace(cfg, valuation="mc", mc_samples=20000))
    assert np.max(np.abs(mc.sv - exact.sv)) < 0.02
    assert mc.stderr is not None and exact.stderr is None


def test_secure_mc_mode_runs():
    cfg = dataclasses.replace(SMALL, owners=4, valuation="mc", mc_samples=10)
    rep = run_protocol(cfg)
    plain = run_plaintext_pipeline(cfg)
    assert np.max(np.abs(rep.sv - plain.sv)) < 1e-3


def test_removal_low_mode_positive():
    cfg = ProtocolConfig(owners=6, group_size=150, seed=0)
    rep = run_plaintext_pipeline(cfg)
    sc = gen_market(6, 150, seed=0)
    lo, ra, hi = removal_curves(sc, rep.sv, seed=0)
    assert len(lo) == len(ra) == len(hi) == 5
    assert effectiveness_score(lo, ra, hi, "low") > 0


def test_bench_scaling():
    base = ProtocolConfig(classes=2, dim=4)
    rows = bench([(2, 20), (2, 40), (3, 20)], base, presets=("domestic",))
    r20, r40, n3 = rows
    assert 1.9 <= r40["bytes_2pc"] / r20["bytes_2pc"] <= 2.1
    assert r40["bytes_mpc"] == r20["bytes_mpc"]
    assert n3["bytes_mpc"] > r20["bytes_mpc"]
    assert n3["bytes_2pc_per_owner"] == r20["bytes_2pc_per_owner"]
    assert bench([]) == [] and format_bench([]) == ""
    assert format_bench(rows).splitlines()[0].startswith("owners,samples,bytes_2pc")


def test_report_outputs(secure_run):
    csv = secure_run.owners_csv().splitlines()
    assert csv[0] == "owner,shapley,loo,offer,tx,state,checksum_ok" and len(csv) == 4
    assert "phase 2pc" in secure_run.summary()


def test_canonical_bytes_are_what_gets_encrypted(secure_run):
    sc = gen_market(3, 30, seed=0)
    for o, od in zip(secure_run.owners, sc.owners):
        if o.crc32 is not None:
            assert o.crc32 == zlib.crc32(encode_dataset(od.X, od.y))
