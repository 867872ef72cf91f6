import math

import numpy as np
import pytest

from rgpmpc import evolving, gp
from rgpmpc.errors import EmptySet, NotPositiveDefinite
from rgpmpc.evolving import EvolvingConfig
from rgpmpc.gp import Hyperparameters, TrainingSet

TH = Hyperparameters(0.4, (0.4, 0.5, 0.6, 0.7), 0.25, 1e-4)


def _model(rng, n):
    return gp.fit(TrainingSet(rng.uniform(0, 1, (n, 4)), rng.uniform(0, 1, n)), TH)


def _assert_same_posterior(a, b, rng, tol):
    for w in rng.uniform(0, 1, (10, 4)):
        ma, va = gp.posterior(a, w)
        mb, vb = gp.posterior(b, w)
        assert abs(ma - mb) < tol and abs(va - vb) < tol


def test_config_validation():
    with pytest.raises(ValueError):
        EvolvingConfig(e_bar=-1)
    with pytest.raises(ValueError):
        EvolvingConfig(capacity_m=0)


def test_zero_thresholds_always_flag(rng):
    m = _model(rng, 10)
    cfg = EvolvingConfig()
    for w in rng.uniform(0, 1, (20, 4)):
        assert evolving.is_candidate(m, w, m.mean(w) + 1e-3 * rng.normal(), cfg).flag


def test_exact_prediction_with_low_variance_not_flagged(rng):
    m = _model(rng, 10)
    w = m.data.regressors[2]
    s = evolving.is_candidate(m, w, m.mean(w), EvolvingConfig(0.01, 1.0))
    assert not s.flag and s.error == 0.0


def test_variance_branch_flags():
    # one training point far away: variance near sigma_f2, mean near c
    th = Hyperparameters(0.0, (0.1,), 1e-4, 0.0)
    m = gp.fit(TrainingSet([[5.0]], [0.0]), th)
    s = evolving.is_candidate(m, [0.0], 0.005, EvolvingConfig(0.01, 2e-5))
    assert abs(s.error) == pytest.approx(0.005)
    assert s.variance == pytest.approx(1e-4)
    assert s.flag


def test_with_point_matches_refit(rng):
    m = _model(rng, 15)
    w, y = rng.uniform(0, 1, 4), 0.3
    cand = evolving.with_point(m, w, y)
    _assert_same_posterior(cand, gp.fit(m.data.appended(w, y), TH), rng, 1e-8)


def test_with_point_on_empty_model_interpolates():
    th = Hyperparameters(0.0, (0.5,), 1.0, 0.0)
    m = evolving.with_point(gp.fit(TrainingSet.empty(1), th), [0.3], 0.8)
    assert m.mean([0.3]) == pytest.approx(0.8, abs=1e-12)


def test_adding_interpolated_point_keeps_old_means(rng):
    th = Hyperparameters(0.0, (0.5, 0.5), 1.0, 0.0)
    m = gp.fit(TrainingSet(rng.uniform(0, 1, (5, 2)), rng.normal(size=5)), th)
    w = rng.uniform(0, 1, 2)
    cand = evolving.with_point(m, w, m.mean(w))
    for wi in m.data.regressors:
        assert cand.mean(wi) == pytest.approx(m.mean(wi), abs=1e-7)


def test_duplicate_regressor_rejected(rng):
    m = _model(rng, 5)
    with pytest.raises(NotPositiveDefinite):
        evolving.with_point(m, m.data.regressors[1] + 1e-12, 0.2)


def test_evict_oldest(rng):
    m = _model(rng, 12)
    e = evolving.evict_oldest(m)
    assert e.n == 11
    np.testing.assert_array_equal(e.data.regressors, m.data.regressors[1:])
    _assert_same_posterior(e, gp.fit(m.data.without(0), TH), rng, 1e-8)
    one = evolving.evict_oldest(_model(rng, 1))
    assert one.n == 0
    with pytest.raises(EmptySet):
        evolving.evict_oldest(one)


def test_capacity_preserved(rng):
    m = _model(rng, 40)
    w = rng.uniform(0, 1, 4)
    cand = evolving.propose(m, w, 5.0, EvolvingConfig(0.0, 0.0, 40))
    assert cand.n == 40
    np.testing.assert_array_equal(cand.data.regressors[:-1], m.data.regressors[1:])
    np.testing.assert_array_equal(cand.data.regressors[-1], w)
    grown = evolving.propose(m, w, 5.0, EvolvingConfig())
    assert grown.n == 41
    again = evolving.evict_oldest(evolving.with_point(m, w, 5.0))
    assert again.n == 40


def test_huge_thresholds_propose_nothing(rng):
    m = _model(rng, 8)
    assert evolving.propose(m, rng.uniform(0, 1, 4), 0.1, EvolvingConfig(1e9, 1e9)) is None


def test_candidate_does_not_alias_source(rng):
    m = _model(rng, 10)
    r, a = m.factor.r.copy(), m.alpha.copy()
    evolving.propose(m, rng.uniform(0, 1, 4), 0.9, EvolvingConfig(capacity_m=10))
    np.testing.assert_array_equal(m.factor.r, r)
    np.testing.assert_array_equal(m.alpha, a)


def test_long_fifo_sequence_matches_refit():
    rng = np.random.default_rng(99)
    m = _model(rng, 40)
    cfg = EvolvingConfig(capacity_m=40)
    order = []
    for _ in range(500):
        w = rng.uniform(0, 1, 4)
        order.append(w)
        m = evolving.grow(m, w, float(np.sin(3 * w.sum()) + 0.01 * rng.normal()), cfg)
    assert m.n == 40
    np.testing.assert_array_equal(m.data.regressors, np.array(order[-40:]))
    _assert_same_posterior(m, gp.fit(m.data, TH), rng, 1e-7)
    assert math.isfinite(m.alpha.sum())
