import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chores_ce.dca import DcaConfig, solve_dca, solve_rounded_dca
from chores_ce.equilibrium import (
    EquilibriumCandidate,
    NonPositivePrice,
    OracleScaleExceeded,
    epsilon_prime,
    exact_ce_residual,
    extract_equilibrium,
    oracle_ce_small,
    stationarity_residual,
    verify_eps_ce,
)
from chores_ce.market import GeneratorConfig, MarketInstance, generate_instance
from chores_ce.objective import RowSumViolation, rescale_to_slice
from chores_ce.sgr import SgrConfig, solve_sgr
from conftest import random_instance


def test_extract(single_agent):
    mu = np.log([1.0, 3.0])
    cand = extract_equilibrium(single_agent, mu, [[1.0, 3.0]])
    np.testing.assert_allclose(cand.p, [1.0, 3.0])
    np.testing.assert_allclose(cand.x, [[1.0, 1.0]])
    with pytest.raises(RowSumViolation):
        extract_equilibrium(single_agent, mu, [[0.5, 1.5]])


def test_budgets_are_met_by_extraction():
    rng = np.random.default_rng(0)
    for _ in range(50):
        inst = random_instance(rng)
        v = rng.dirichlet(np.ones(inst.m), size=inst.n) * inst.B[:, None]
        cand = extract_equilibrium(inst, rng.normal(0, 2, inst.m), v)
        np.testing.assert_allclose(cand.x @ cand.p, inst.B, rtol=1e-12)


def test_verifier_examples(single_agent):
    exact = EquilibriumCandidate([1.0, 3.0], [[1.0, 1.0]])
    rep = verify_eps_ce(single_agent, exact, 1e-12)
    assert rep.passes and rep.max_residual == 0.0
    assert exact_ce_residual(single_agent, exact) == (0.0, 0.0, 0.0)
    scaled = EquilibriumCandidate([1.0, 3.0], [[1.05, 1.05]])
    rep = verify_eps_ce(single_agent, scaled, 0.01)
    assert rep.a1_residual == pytest.approx(1 - 1 / 1.05) == pytest.approx(0.0476, abs=1e-4)
    assert rep.a3_residual == pytest.approx(1 - 1 / 1.05)
    assert rep.a2_residual == pytest.approx(0.0, abs=1e-15)
    assert not rep.passes
    chore = MarketInstance([[1.0], [4.0]], [2.0, 3.0])
    rep = verify_eps_ce(chore, EquilibriumCandidate([5.0], [[0.4], [0.6]]), 1e-12)
    assert rep.passes and rep.max_residual == pytest.approx(0.0, abs=1e-15)


def test_exact_residual_examples():
    inst = MarketInstance([[1.0, 2.0]], [1.0])
    e1, e2, e3 = exact_ce_residual(inst, EquilibriumCandidate([1.0, 1.0], [[0.0, 1.0]]))
    assert e2 == pytest.approx(0.5)
    single = MarketInstance([[1.0, 3.0]], [4.0])
    e1, _, _ = exact_ce_residual(single, EquilibriumCandidate([2.0, 6.0], [[1.0, 1.0]]))
    assert e1 == pytest.approx(1.0)


def test_bad_prices():
    inst = MarketInstance([[1.0, 2.0]], [1.0])
    with pytest.raises(NonPositivePrice):
        verify_eps_ce(inst, EquilibriumCandidate([0.0, 1.0], [[0.0, 1.0]]), 0.1)
    with pytest.raises(ValueError):
        verify_eps_ce(inst, EquilibriumCandidate([1.0], [[1.0]]), 0.1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.5), st.floats(0.5, 0.99))
def test_verifier_monotone_in_eps(seed, e1, e2):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_dim=4)
    cand = EquilibriumCandidate(rng.uniform(0.1, 2, inst.m), rng.uniform(0, 1, (inst.n, inst.m)))
    if verify_eps_ce(inst, cand, e1).passes:
        assert verify_eps_ce(inst, cand, e2).passes
    rep = verify_eps_ce(inst, cand, e1, eps_list=[0.1, 0.3, 0.6, 0.9])
    if rep.passes_at is not None:
        assert rep.max_residual <= rep.passes_at


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100))
def test_best_response_gap_is_scale_free(seed, t):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_dim=4)
    p, x = rng.uniform(0.1, 2, inst.m), rng.uniform(0, 1, (inst.n, inst.m))
    _, e2, _ = exact_ce_residual(inst, EquilibriumCandidate(p, x))
    _, e2t, _ = exact_ce_residual(inst, EquilibriumCandidate(t * p, x))
    assert e2t == pytest.approx(e2, abs=1e-12)


def test_stationarity_examples(single_agent):
    mu = np.array([0.0, np.log(3.0)])
    v = np.array([[1.0, 3.0]])
    assert stationarity_residual(single_agent, mu, v) == pytest.approx(0.0, abs=1e-15)
    assert stationarity_residual(single_agent, mu + 2.7, v) == pytest.approx(0.0, abs=1e-14)
    assert stationarity_residual(single_agent, [0.0, 0.0], [[2.0, 2.0]]) > 0.1


def test_epsilon_prime():
    d = np.array([[1.0, 2.0, 4.0], [3.0, 6.0, 12.0]])
    inst = MarketInstance(d, [1.0, 2.0])
    assert epsilon_prime(inst, np.log([1.0, 2.0, 4.0]), 0.01) == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(2)
    for _ in range(100):
        inst = random_instance(rng)
        assert epsilon_prime(inst, rng.normal(0, 2, inst.m), float(rng.uniform(0.001, 0.3))) >= -1e-12


def test_epsilon_prime_bounded_by_eps_under_theoretical_delta():
    rng = np.random.default_rng(3)
    for k in range(6):
        inst = generate_instance(GeneratorConfig("uniform", int(rng.integers(2, 10)), int(rng.integers(3, 10)), seed=k))
        res = solve_sgr(inst, SgrConfig(eps=0.05, delta_mode="theoretical"))
        assert res.converged
        assert epsilon_prime(inst, res.mu, res.config["delta"]) <= 0.05


def test_oracle_examples(single_agent):
    found = oracle_ce_small(single_agent)
    assert len(found) == 1
    np.testing.assert_allclose(found[0].p, [1.0, 3.0], atol=1e-9)
    twins = MarketInstance(np.full((2, 2), 3.0), [1.0, 1.0])
    prices = [c.p for c in oracle_ce_small(twins)]
    assert any(np.allclose(p, [1.0, 1.0], atol=1e-9) for p in prices)
    with pytest.raises(OracleScaleExceeded):
        oracle_ce_small(MarketInstance(np.ones((1, 4)), [1.0]))


def test_oracle_results_are_exact_equilibria():
    rng = np.random.default_rng(4)
    for _ in range(10):
        inst = random_instance(rng, max_dim=3)
        found = oracle_ce_small(inst)
        assert found
        for cand in found:
            assert max(exact_ce_residual(inst, cand)) <= 1e-8
            mu = rescale_to_slice(inst, np.log(cand.p))
            v = cand.p[None, :] * cand.x
            assert stationarity_residual(inst, mu, v) <= 1e-8


def test_solvers_land_on_oracle_clusters():
    rng = np.random.default_rng(5)
    for _ in range(5):
        inst = random_instance(rng, n=2, m=2)
        found = oracle_ce_small(inst)
        tol = 10 * 1e-3 * inst.total_budget
        outs = [
            solve_dca(inst, DcaConfig(eps=1e-8)),
            solve_rounded_dca(inst, DcaConfig(eps=1e-8)),
            solve_sgr(inst, SgrConfig(eps=1e-3, delta_mode="theoretical")),
        ]
        for res in outs:
            assert min(np.max(np.abs(res.candidate.p - c.p)) for c in found) <= tol
