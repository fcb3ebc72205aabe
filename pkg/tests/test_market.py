import numpy as np
import pytest

from shapmkt.errors import ParameterError
from shapmkt.market import (
    class_proportions,
    flip_keep_prob,
    gaussian_sigma,
    gen_market,
    label_keep_prob,
    load_market,
    save_market,
)


def test_gaussian_schedule_and_rank():
    sc = gen_market(5, 20, "gaussian", seed=1)
    assert [gaussian_sigma(i, 5) for i in range(1, 6)] == pytest.approx([2.8, 4.6, 6.4, 8.2, 10.0])
    assert list(sc.noise_rank) == [1, 2, 3, 4, 5]
    assert all(len(o) == 20 for o in sc.owners)


def test_flip_schedule():
    assert flip_keep_prob(1, 2) == 0.0 and flip_keep_prob(2, 2) == 0.5
    sc = gen_market(2, 50, "flip", seed=0)
    assert set(np.unique(sc.owners[0].X)) <= {0.0, 1.0}
    assert list(sc.noise_rank) == [2, 1]  # owner 1 flips every feature


def test_label_flip_schedule():
    assert label_keep_prob(1, 5) == 1.0 and label_keep_prob(5, 5) == pytest.approx(0.6)
    assert label_keep_prob(1, 1) == 1.0
    sc = gen_market(4, 30, "label-flip", seed=2)
    assert list(sc.noise_rank) == [1, 2, 3, 4]


def test_dirichlet_proportions_normalized():
    sc = gen_market(4, 60, "dirichlet", n_classes=3, seed=3)
    for o in sc.owners:
        assert abs(class_proportions(o, 3).sum() - 1.0) < 1e-9
    assert sum(len(o) for o in sc.owners) == 4 * 60


def test_invalid_spec():
    with pytest.raises(ParameterError):
        gen_market(0, 10)
    with pytest.raises(ParameterError):
        gen_market(3, 10, "salt")
    with pytest.raises(ParameterError):
        gen_market(3, 10, n_classes=1)


def test_preshare_fraction():
    sc = gen_market(3, 40, seed=4)
    X, y, who = sc.preshared(np.random.default_rng(0))
    assert len(X) == 12 and np.array_equal(np.bincount(who), [4, 4, 4])
    # pre-shared rows are real owner rows
    for row, i in zip(X, who):
        assert any(np.array_equal(row, r) for r in sc.owners[i].X)


def test_csv_round_trip(tmp_path):
    sc = gen_market(3, 15, "gaussian", seed=5)
    save_market(sc, tmp_path)
    back = load_market(tmp_path)
    assert back.N == 3 and back.n_classes == sc.n_classes
    for a, b in zip(sc.owners, back.owners):
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert np.array_equal(back.noise_level, sc.noise_level)
    with pytest.raises(ParameterError):
        load_market(tmp_path / "missing")


def test_same_seed_same_market():
    a, b = gen_market(3, 10, seed=9), gen_market(3, 10, seed=9)
    assert all(np.array_equal(x.X, y.X) for x, y in zip(a.owners, b.owners))
