import numpy as np
import pytest

from chores_ce.equilibrium import verify_eps_ce
from chores_ce.market import GeneratorConfig, MarketInstance, generate_instance
from chores_ce.objective import grad_ell, mu_lower_delta
from chores_ce.sgr import SgrConfig, default_delta, default_step, scaled_step, solve_sgr


def test_default_delta():
    assert default_delta(0.01, 2, "theoretical") == pytest.approx(0.0076923, abs=1e-7)
    for m in (2, 10, 500):
        assert default_delta(0.01, m) == pytest.approx(0.01 / 1.3)
        assert default_delta(0.01, m, "theoretical") <= default_delta(0.01, m)
    assert default_delta(0.01, 1, "theoretical") == pytest.approx(0.01 / 1.3)
    with pytest.raises(ValueError):
        default_delta(0.6, 3)
    with pytest.raises(ValueError):
        default_delta(0.1, 3, "guess")


def test_default_step():
    inst = MarketInstance([[1.0, 2.0]], [1.0])
    assert default_step(inst, 1.0, 0.5) == pytest.approx(0.25)
    big = MarketInstance([[1.0, 2.0]], [10.0])
    assert default_step(big, 0.1, 0.9) == pytest.approx(default_step(inst, 0.1, 0.9) / 10)
    assert default_step(big, 0.1, 0.9) < 0.9 / 10
    assert scaled_step(big, 0.1, 0.9) == pytest.approx(2 * default_step(big, 0.1, 0.9))
    tall = MarketInstance(np.ones((7, 3)), np.ones(7))
    assert scaled_step(tall, 0.1, 0.9) == pytest.approx(7 * default_step(tall, 0.1, 0.9))


def test_imbalanced_market_halves_back_to_a_stable_step():
    inst = generate_instance(GeneratorConfig("uniform", 400, 20, seed=9))
    res = solve_sgr(inst, SgrConfig(eps=0.01))
    assert res.converged and verify_eps_ce(inst, res.candidate, 0.01).passes
    lo = default_step(inst, res.config["delta"], 0.99)
    assert lo <= res.config["step"] <= scaled_step(inst, res.config["delta"], 0.99)


def test_config_validation():
    with pytest.raises(ValueError):
        SgrConfig(eps=0.5)
    with pytest.raises(ValueError):
        SgrConfig(gamma=1.0)
    with pytest.raises(ValueError):
        SgrConfig(step_mode="adaptive")
    with pytest.raises(ValueError):
        SgrConfig(step_mode=-1.0)
    with pytest.raises(ValueError):
        SgrConfig(delta_mode=-0.1).delta_for(3)


def test_single_agent_analytic(single_agent):
    res = solve_sgr(single_agent, SgrConfig(eps=1e-3))
    assert res.converged
    np.testing.assert_allclose(res.candidate.p, [1.0, 3.0], rtol=1e-3)


def test_symmetric_market_stops_immediately():
    inst = MarketInstance(np.full((3, 4), 2.0), [1.0, 2.0, 0.5])
    res = solve_sgr(inst)
    assert res.converged and res.iterations == 0


@pytest.mark.parametrize("step_mode", ["scaled", "theoretical"])
def test_random_instance_passes_verifier(step_mode):
    inst = generate_instance(GeneratorConfig("uniform", 10, 10, seed=1))
    res = solve_sgr(inst, SgrConfig(eps=0.01, step_mode=step_mode))
    assert res.converged and res.status == "converged"
    assert verify_eps_ce(inst, res.candidate, 0.01).passes


def test_descent_with_theoretical_step():
    rng = np.random.default_rng(0)
    dists = ["uniform", "lognormal", "exponential", "integer"]
    for k in range(20):
        inst = generate_instance(GeneratorConfig(dists[k % 4], int(rng.integers(1, 9)), int(rng.integers(2, 9)), seed=k))
        # raises DescentViolation on the first bad iteration
        solve_sgr(inst, SgrConfig(eps=0.01, step_mode="theoretical", check_descent=True, max_iter=3000))


def test_floor_is_maintained():
    inst = generate_instance(GeneratorConfig("exponential", 8, 12, seed=3))
    cfg = SgrConfig(eps=0.01, keep_iterates=True)
    res = solve_sgr(inst, cfg)
    a = mu_lower_delta(inst, res.config["delta"])
    for mu_hat in res.trace.iterates:
        assert np.all(grad_ell(inst, mu_hat) >= np.exp(a) * (1 - 1e-9))


def test_stop_rule_is_sound_with_theoretical_delta():
    rng = np.random.default_rng(1)
    for k in range(8):
        inst = generate_instance(GeneratorConfig("lognormal", int(rng.integers(2, 12)), int(rng.integers(2, 12)), seed=k))
        res = solve_sgr(inst, SgrConfig(eps=0.05, delta_mode="theoretical"))
        assert res.converged
        assert verify_eps_ce(inst, res.candidate, 0.05).passes


def test_fixed_delta_and_step():
    inst = generate_instance(GeneratorConfig("uniform", 4, 4, seed=4))
    res = solve_sgr(inst, SgrConfig(eps=0.02, delta_mode=0.005, step_mode=0.01))
    assert res.config["delta"] == 0.005 and res.config["step"] == 0.01
    assert res.converged


def test_max_iter_returns_best_iterate():
    inst = generate_instance(GeneratorConfig("uniform", 20, 20, seed=5))
    res = solve_sgr(inst, SgrConfig(eps=1e-3, max_iter=5))
    assert not res.converged and res.status == "max_iter"
    assert res.measure == pytest.approx(min(res.trace.column("measure_max")))
    np.testing.assert_allclose(res.incomes.sum(axis=1), inst.B)


def test_time_limit():
    inst = generate_instance(GeneratorConfig("uniform", 30, 30, seed=6))
    res = solve_sgr(inst, SgrConfig(eps=1e-4, time_limit_s=0.0))
    assert res.status == "time_limit" and res.iterations == 0
