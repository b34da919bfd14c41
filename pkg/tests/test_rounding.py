import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chores_ce.market import MarketInstance
from chores_ce.objective import eval_F, eval_F_delta, grad_ell, mu_lower, mu_lower_delta
from chores_ce.rounding import FloorTooHigh, round_mu, threshold
from conftest import random_instance


def test_hand_trace():
    a, b = np.log(0.5), 2.0
    res = round_mu(a, [0.0, -10.0], b)
    shift = (-10 + np.log(3)) / 2
    assert res.shift == pytest.approx(shift)
    np.testing.assert_allclose(res.unshifted, [0.0, -np.log(3)], atol=1e-12)
    np.testing.assert_allclose(res.mu, [shift, -np.log(3) + shift], atol=1e-12)
    np.testing.assert_allclose(res.mu, [-4.4507, -5.5493], atol=1e-4)
    np.testing.assert_allclose(b * np.exp(res.mu) / np.exp(res.mu).sum(), [1.5, 0.5], atol=1e-12)


def test_identity_when_all_prices_above_floor():
    mu0 = np.array([0.1, -0.2, 0.3])
    res = round_mu(np.log(0.1), mu0, 3.0)
    assert res.loops == 0 and np.array_equal(res.mu, mu0)


def test_threshold_examples():
    assert threshold([0.0, 7.0], [False, True], np.log(0.5), 2.0) == pytest.approx(-np.log(3))
    m, b, mu1 = 4, 8.0, 0.3
    a = np.log(b / (2 * m))
    assert threshold(np.full(m, mu1), np.zeros(m, bool), a, b) == pytest.approx(mu1 - np.log(2))
    lo = threshold([0.5, 0.0, -1.0], [False, False, True], -3.0, 2.0)
    hi = threshold([0.5, 0.0, -1.0], [False, False, True], -2.5, 2.0)
    assert hi > lo


def test_floor_guard():
    with pytest.raises(FloorTooHigh):
        round_mu(np.log(1.0), [0.0, 0.0], 2.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_postconditions(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_dim=8)
    delta = float(rng.uniform(0.001, 0.2))
    a = mu_lower_delta(inst, delta) - rng.exponential(0.5)
    mu0 = rng.normal(0, 3, inst.m)
    mu0[rng.random(inst.m) < 0.3] -= rng.uniform(5, 30)
    res = round_mu(a, mu0, inst.total_budget)
    assert abs(res.mu.sum() - mu0.sum()) <= 1e-10 * max(1.0, np.abs(mu0).sum())
    assert eval_F_delta(inst, res.mu, delta) <= eval_F_delta(inst, mu0, delta) + 1e-10
    assert np.all(grad_ell(inst, res.mu) >= np.exp(a) * (1 - 1e-9))
    assert res.loops <= inst.m
    assert np.all(res.unshifted >= mu0 - 1e-12 * (1 + abs(res.shift)))


def test_idempotent_after_unshift():
    rng = np.random.default_rng(3)
    for _ in range(200):
        m = int(rng.integers(2, 9))
        b = float(rng.uniform(1, 10))
        a = np.log(b / m) - rng.uniform(0.5, 4)
        mu0 = rng.normal(0, 3, m)
        mu0[0] -= 20
        first = round_mu(a, mu0, b)
        again = round_mu(a, first.unshifted, b)
        np.testing.assert_allclose(again.unshifted, first.unshifted, atol=1e-10)


def test_permutation_equivariance():
    rng = np.random.default_rng(4)
    for _ in range(100):
        m = int(rng.integers(2, 8))
        b = float(rng.uniform(1, 5))
        a = np.log(b / m) - 1.5
        mu0 = rng.normal(0, 4, m)
        perm = rng.permutation(m)
        np.testing.assert_allclose(round_mu(a, mu0[perm], b).mu, round_mu(a, mu0, b).mu[perm], atol=1e-12)


def test_nonsmooth_objective_does_not_increase():
    rng = np.random.default_rng(5)
    for _ in range(500):
        inst = random_instance(rng, max_dim=7)
        a = mu_lower(inst) - rng.exponential(0.5)
        if not np.exp(a) < inst.total_budget / inst.m:
            continue
        mu0 = rng.normal(0, 3, inst.m)
        mu0[rng.random(inst.m) < 0.4] -= rng.uniform(3, 20)
        out = round_mu(a, mu0, inst.total_budget).mu
        assert eval_F(inst, out) <= eval_F(inst, mu0) + 1e-10


def test_ties_are_lifted_together():
    res = round_mu(np.log(0.4), [0.0, -9.0, -9.0, 1.0], 4.0)
    assert res.mu[1] == res.mu[2]
    single = MarketInstance(np.ones((1, 4)), [4.0])
    assert np.all(grad_ell(single, res.mu) >= 0.4 * (1 - 1e-12))
