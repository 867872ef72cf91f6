import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgpmpc import chol
from rgpmpc.chol import CholFactor
from rgpmpc.errors import DimensionMismatch, NotPositiveDefinite

from conftest import random_spd


def rel_fro(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_factorize_trivial():
    np.testing.assert_allclose(chol.factorize([[4.0]]).r, [[2.0]])
    np.testing.assert_allclose(chol.factorize(np.eye(3)).r, np.eye(3))


def test_factorize_reconstructs(rng):
    a = random_spd(rng, 5)
    f = chol.factorize(a)
    assert np.allclose(np.tril(f.r, -1), 0)
    assert np.all(np.diag(f.r) > 0)
    assert rel_fro(f.matrix(), a) < 1e-10


def test_factorize_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        chol.factorize(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_jitter_rescues_singular_matrix():
    v = np.array([1.0, 1.0, 1.0])
    f = chol.factorize(np.outer(v, v), jitter=1e-8)
    assert f.n == 3
    assert np.all(np.diag(f.r) > 0)


def test_solve_examples(rng):
    np.testing.assert_allclose(chol.solve(chol.factorize(np.eye(3)), [1, 2, 3]), [1, 2, 3])
    np.testing.assert_allclose(chol.solve(chol.factorize([[4.0]]), [8.0]), [2.0])
    a = random_spd(rng, 6)
    b = rng.normal(size=6)
    x = chol.solve(chol.factorize(a), b)
    oracle = np.linalg.inv(a) @ b
    assert np.linalg.norm(x - oracle) / np.linalg.norm(oracle) < 1e-8


def test_solve_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        chol.solve(chol.factorize(np.eye(3)), [1.0, 2.0])


def test_insert_into_empty():
    f = chol.insert(CholFactor.empty(), [], 9.0, 0)
    np.testing.assert_allclose(f.r, [[3.0]])


@pytest.mark.parametrize("position", [0, 2, 4])
def test_insert_matches_full_refactorization(rng, position):
    big = random_spd(rng, 5)
    keep = [i for i in range(5) if i != position]
    small = big[np.ix_(keep, keep)]
    col = big[keep, position]
    f = chol.insert(chol.factorize(small), col, big[position, position], position)
    assert rel_fro(f.r, chol.factorize(big).r) < 1e-10


@pytest.mark.parametrize("position", [0, 1, 3])
def test_remove_matches_full_refactorization(rng, position):
    a = random_spd(rng, 4)
    keep = [i for i in range(4) if i != position]
    f = chol.remove(chol.factorize(a), position)
    assert rel_fro(f.r, chol.factorize(a[np.ix_(keep, keep)]).r) < 1e-10


def test_remove_last_point_gives_empty():
    assert chol.remove(chol.factorize([[2.0]]), 0).n == 0


def test_remove_out_of_range():
    with pytest.raises(IndexError):
        chol.remove(chol.factorize(np.eye(2)), 2)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 30), seed=st.integers(0, 2**31 - 1), data=st.data())
def test_insert_remove_round_trip(n, seed, data):
    rng = np.random.default_rng(seed)
    big = random_spd(rng, n + 1)
    pos = data.draw(st.integers(0, n))
    keep = [i for i in range(n + 1) if i != pos]
    base = chol.factorize(big[np.ix_(keep, keep)])
    grown = chol.insert(base, big[keep, pos], big[pos, pos], pos)
    back = chol.remove(grown, pos)
    assert np.max(np.abs(back.r - base.r)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 50), seed=st.integers(0, 2**31 - 1))
def test_solve_matches_inverse_oracle(n, seed):
    rng = np.random.default_rng(seed)
    a = random_spd(rng, n)
    b = rng.normal(size=n)
    x = chol.solve(chol.factorize(a), b)
    oracle = np.linalg.inv(a) @ b
    assert np.linalg.norm(x - oracle) / np.linalg.norm(oracle) < 1e-8


def _median_time(fn, trials=25):
    ts = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def test_append_faster_than_refactorization(rng):
    ratios = []
    for n in (50, 100, 200, 400):
        big = random_spd(rng, n + 1, shift=float(n))
        base = chol.factorize(big[:n, :n])
        t_rec = _median_time(lambda: chol.append(base, big[:n, n], big[n, n]))
        t_full = _median_time(lambda: chol.factorize(big))
        assert t_rec < t_full, n
        ratios.append(t_full / t_rec)
    assert ratios[-1] > ratios[1]
