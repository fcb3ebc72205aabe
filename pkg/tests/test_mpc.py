import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fxcircuits import random_program, run
from shapmkt.errors import AbortError, DealerError, ShapeError
from shapmkt.mpc import Dealer, Engine, PlainFixedPoint, SharedTensor
from shapmkt.ring import FixCfg, fx_decode, fx_encode
from shapmkt.transport import FRAME_BYTES, Network

ULP = 2.0**-16


def make_engine(n=3, seed=0, mode="exact", budget=None):
    net = Network(range(n))
    dealer = Dealer(np.random.default_rng(seed + 1000), budget=budget)
    return Engine(net, dealer, trunc_mode=mode, rng=np.random.default_rng(seed))


def raw_tensor(e, vals, scale):
    """Shared tensor holding raw signed ring integers at a declared scale."""
    parties = tuple(e.net.parties)
    t = e.input_tensor(parties[0], np.asarray(vals, dtype=float), parties, scale=0)
    return SharedTensor(t.parties, t.pieces, t.cfg, scale)


def test_input_and_open_examples():
    e = make_engine()
    P = (0, 1, 2)
    assert np.all(e.open(e.input_tensor(0, np.zeros((2, 3)), P)) == 0)
    got = e.open(e.input_tensor(1, [1.0, -2.5], P))
    assert np.array_equal(got, fx_encode(np.array([1.0, -2.5])))


def test_input_round_trip_random_4x4_five_parties():
    e = make_engine(n=5)
    x = np.random.default_rng(1).normal(size=(4, 4)) * 10
    back = e.open_float(e.input_tensor(3, x, range(5)))
    assert np.max(np.abs(back - x)) <= 2.0**-17


def test_open_to_buyer_only_leaves_other_views_unchanged():
    e = make_engine()
    t = e.input_tensor(1, [1.0, 2.0], (0, 1, 2))
    before = {p: len(v) for p, v in e.views.items()}
    e.open(t, to=0)
    assert len(e.views[0]) == before[0] + 1
    assert len(e.views[1]) == before[1] and len(e.views[2]) == before[2]


def test_lincomb_examples():
    e = make_engine()
    P = (0, 1, 2)
    x = e.input_tensor(0, [1.0, -3.0, 2.5], P)
    y = e.input_tensor(1, [0.5, 4.0, -1.0], P)
    assert np.array_equal(e.open(e.lincomb([(1, x)], [0, 0, 0])), e.open(x))
    assert np.array_equal(e.open(e.lincomb([(1, x), (1, y)])), fx_encode(np.array([1.5, 1.0, 1.5])))
    half = e.open_float(e.lincomb([(0.5, x)]))
    assert np.max(np.abs(half - np.array([0.5, -1.5, 1.25]))) <= ULP


def test_lincomb_sends_nothing_for_integer_coefficients():
    e = make_engine()
    P = (0, 1, 2)
    x = e.input_tensor(0, [1.0, 2.0], P)
    before = len(e.net.log)
    e.lincomb([(3, x), (-2, x)], [1.0, 1.0])
    assert len(e.net.log) == before
    assert e.transcript[-1].op == "lincomb" and e.transcript[-1].stats.bytes_sent == 0


def test_lincomb_shape_mismatch():
    e = make_engine()
    x = e.input_tensor(0, [1.0, 2.0], (0, 1, 2))
    y = e.input_tensor(0, [1.0, 2.0, 3.0], (0, 1, 2))
    with pytest.raises(ShapeError):
        e.lincomb([(1, x), (1, y)])


@pytest.mark.parametrize("a, b, expected", [(3.0, 0.0, 0.0), (3.0, 4.0, 12.0), (1.5, 2.0, 3.0)])
def test_beaver_mul_exact(a, b, expected):
    e = make_engine()
    x = e.input_tensor(0, [a], (0, 1, 2))
    y = e.input_tensor(1, [b], (0, 1, 2))
    assert np.array_equal(e.open(e.beaver_mul(x, y)), fx_encode(np.array([expected])))


def test_beaver_mul_communication_contract():
    n, size = 4, 5
    e = make_engine(n=n)
    P = tuple(range(n))
    x = e.input_tensor(0, np.ones(size), P)
    y = e.input_tensor(1, np.ones(size), P)
    e.beaver_mul(x, y)
    mul = [t for t in e.transcript if t.op == "beaver_mul"][-1]
    # each party sends d and e (2 ring elements per coordinate) to each peer
    assert mul.stats.bytes_sent == n * (n - 1) * (2 * size * 8 + FRAME_BYTES)
    for p in P:
        assert mul.stats.bytes_from(p) == (n - 1) * (2 * size * 8 + FRAME_BYTES)


def test_dealer_exhaustion():
    e = make_engine(budget=3)
    x = e.input_tensor(0, np.ones(5), (0, 1, 2))
    with pytest.raises(DealerError):
        e.beaver_mul(x, x)


def test_square_examples():
    e = make_engine()
    P = (0, 1, 2)
    assert np.all(e.open(e.square(e.input_tensor(0, [0.0], P))) == 0)
    assert np.array_equal(e.open(e.square(e.input_tensor(0, [-3.0], P))), fx_encode(np.array([9.0])))


def test_square_matches_opened_square_within_one_ulp():
    e = make_engine(seed=5)
    vals = np.random.default_rng(5).uniform(-20, 20, size=200)
    x = e.input_tensor(1, vals, (0, 1, 2))
    xo = e.open_float(x)
    sq = e.open_float(e.square(x))
    assert np.max(np.abs(sq - xo**2)) <= ULP


def test_square_uses_half_the_openings_of_beaver():
    e = make_engine()
    x = e.input_tensor(0, np.ones(10), (0, 1, 2))
    e.square(x)
    sq = [t for t in e.transcript if t.op == "square"][-1]
    e.beaver_mul(x, x)
    mul = [t for t in e.transcript if t.op == "beaver_mul"][-1]
    assert 2 * (sq.stats.bytes_sent - 6 * FRAME_BYTES) == mul.stats.bytes_sent - 6 * FRAME_BYTES


def test_matvec_examples():
    e = make_engine()
    P = (0, 1, 2)
    eye = e.input_tensor(0, np.eye(3), P)
    x = e.input_tensor(1, [1.0, -2.0, 0.25], P)
    zero = e.input_tensor(0, np.zeros(3), P)
    assert np.array_equal(e.open(e.matvec_affine(eye, x, zero)), e.open(x))
    W = e.input_tensor(0, [[1, 2], [3, 4]], P)
    v = e.input_tensor(1, [1, 1], P)
    b = e.input_tensor(0, [0, 0], P)
    assert np.array_equal(e.open(e.matvec_affine(W, v, b)), fx_encode(np.array([3.0, 7.0])))


def test_matvec_random_layer_error_budget():
    rng = np.random.default_rng(9)
    W, x, b = rng.uniform(-1, 1, (8, 16)), rng.uniform(-1, 1, 16), rng.uniform(-1, 1, 8)
    e = make_engine(seed=9)
    P = (0, 1, 2)
    out = e.open_float(e.matvec_affine(e.input_tensor(0, W, P), e.input_tensor(1, x, P), e.input_tensor(0, b, P)))
    assert np.max(np.abs(out - (W @ x + b))) <= 16 * ULP


def test_matvec_batch_of_columns_matches_per_column():
    rng = np.random.default_rng(4)
    W, X, b = rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (4, 5)), rng.uniform(-1, 1, 3)
    e = make_engine(seed=4)
    P = (0, 1)
    e = Engine(Network(P), Dealer(np.random.default_rng(3)), rng=np.random.default_rng(2))
    Wt, bt = e.input_tensor(0, W, P), e.input_tensor(0, b, P)
    batch = e.open(e.matvec_affine(Wt, e.input_tensor(1, X, P), bt))
    for j in range(5):
        col = e.open(e.matvec_affine(Wt, e.input_tensor(1, X[:, j], P), bt))
        assert np.array_equal(batch[:, j], col)


def test_matvec_shape_mismatch():
    e = make_engine()
    P = (0, 1, 2)
    with pytest.raises(ShapeError):
        e.matvec_affine(e.input_tensor(0, np.ones((2, 3)), P), e.input_tensor(1, np.ones(2), P))


def test_mean_readout_examples():
    e = make_engine()
    P = (0, 1, 2)
    rep = e.input_tensor(1, [0.3, -1.2], P)
    assert np.array_equal(e.open(e.mean_readout([rep], [1])), e.open(rep))
    assert np.array_equal(e.open(e.mean_readout([rep, rep], [1, 1])), e.open(rep))
    with pytest.raises(ShapeError):
        e.mean_readout([], [])


def test_mean_readout_weighted_three_owners():
    rng = np.random.default_rng(12)
    counts = [2, 3, 5]
    samples = [rng.uniform(-1, 1, size=(c, 4)) for c in counts]
    e = make_engine(n=4)
    P = tuple(range(4))
    sums = [e.input_tensor(i + 1, s.sum(axis=0), P) for i, s in enumerate(samples)]
    got = e.open_float(e.mean_readout(sums, counts))
    want = np.concatenate(samples).mean(axis=0)
    assert np.max(np.abs(got - want)) <= ULP + 2.0**-17


def test_truncate_simple():
    e = make_engine()
    t = raw_tensor(e, [5 * 2**16], 16)
    out = e.truncate(t, 16)
    assert out.scale == 0
    assert int(e.open(out)[0]) == 5


def test_exact_truncation_matches_shift_oracle():
    rng = np.random.default_rng(21)
    vals = rng.integers(-(2**44), 2**44, size=10_000)
    e = make_engine(seed=21)
    got = e.cfg.to_signed(e.open(e.truncate(raw_tensor(e, vals, 16), 16)))
    assert np.array_equal(got, vals >> 16)


def test_local_truncation_error_histogram_two_party():
    rng = np.random.default_rng(22)
    vals = rng.integers(-(2**20), 2**20, size=10_000)
    e = Engine(Network((0, 1)), Dealer(np.random.default_rng(1)), trunc_mode="local", rng=np.random.default_rng(2))
    got = e.cfg.to_signed(e.open(e.truncate(raw_tensor(e, vals, 16), 16)))
    assert np.max(np.abs(got - (vals >> 16))) <= 2


def test_local_truncation_many_parties_bounded():
    rng = np.random.default_rng(23)
    vals = rng.integers(-(2**30), 2**30, size=2000)
    e = make_engine(n=5, mode="local")
    got = e.cfg.to_signed(e.open(e.truncate(raw_tensor(e, vals, 16), 16)))
    assert np.max(np.abs(got - (vals >> 16))) <= 5


def test_convert_2_to_n_reconstructs():
    e = make_engine(n=5)
    x = e.input_tensor(2, np.random.default_rng(0).normal(size=100), (0, 2))
    want = e.open(x)
    lifted = e.convert_2_to_n(x, range(5))
    assert lifted.party_count == 5
    assert np.array_equal(e.open(lifted), want)


def test_abort_on_failed_party():
    e = make_engine()
    x = e.input_tensor(0, [1.0], (0, 1, 2))
    e.fail(2)
    with pytest.raises(AbortError):
        e.open(x)


def test_dealer_counters_match_static_prediction():
    e = make_engine()
    P = (0, 1, 2)
    m, n, s = 4, 3, 5
    W = e.input_tensor(0, np.ones((m, n)) * 0.1, P)
    X = e.input_tensor(1, np.ones((n, s)), P)
    b = e.input_tensor(0, np.zeros(m), P)
    h = e.matvec_affine(W, X, b)
    e.square(h)
    f = e.cfg.f
    c = e.dealer.counters()
    assert c["squares"] == m * s
    assert c["trunc_pairs"] == 2 * m * s
    # products + (f - 1) comparison multiplications per truncated coordinate
    assert c["triples"] == m * n * s + 2 * m * s * (f - 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_secure_equals_plain_interpreter(seed):
    rng = np.random.default_rng(seed)
    prog = random_program(rng, n_steps=4)
    e = make_engine(seed=seed % 1000)
    owners = (0, 1)
    got, _, _, _ = run(e, prog, (0, 1, 2), owners)
    want, _, _, _ = run(PlainFixedPoint(), prog, (0, 1, 2), owners)
    assert np.array_equal(got, want)


def test_transcript_report_lines():
    e = make_engine()
    x = e.input_tensor(0, [1.0], (0, 1, 2))
    e.open(e.square(x))
    lines = e.report().strip().splitlines()
    assert lines[0] == "op\tbytes\trounds\tseconds"
    assert [ln.split("\t")[0] for ln in lines[1:]] == ["input_tensor", "square", "truncate", "open"]
    total = sum(int(ln.split("\t")[1]) for ln in lines[1:])
    assert total == e.net.stats().bytes_sent


def test_smaller_ring_works():
    cfg = FixCfg(k=48, f=12)
    e = Engine(Network((0, 1, 2)), Dealer(np.random.default_rng(0), cfg), cfg=cfg, rng=np.random.default_rng(1))
    x = e.input_tensor(0, [1.5, -2.0], (0, 1, 2))
    y = e.input_tensor(1, [2.0, 3.0], (0, 1, 2))
    assert np.array_equal(e.open(e.beaver_mul(x, y)), fx_encode(np.array([3.0, -6.0]), cfg))
