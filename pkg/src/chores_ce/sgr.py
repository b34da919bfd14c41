"""Smoothed gradient method with rounding.

Gradient descent with a constant step on the entropy-smoothed objective;
each iterate is rounded first so that all implied prices stay above
``exp(a)``. The run stops once ``|grad_j F_delta| / q_j < eps`` for all j at
the rounded point, and the softmax incomes there give the allocation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dca import SolveResult, uniform_start
from .equilibrium import extract_equilibrium
from .market import MarketInstance
from .objective import SmoothedKernel, eval_F_delta, mu_lower_delta
from .rounding import round_mu
from .trace import SolverTrace, TraceRow


def default_delta(eps: float, m: int, mode: str = "heuristic") -> float:
    """Smoothing level: ``eps/(1.3 + log(m-1))`` (theoretical) or ``eps/1.3`` (heuristic)."""
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    if mode == "heuristic" or m <= 2:
        return eps / 1.3
    if mode == "theoretical":
        return eps / (1.3 + np.log(m - 1))
    raise ValueError(f"unknown delta mode {mode!r}")


def default_step(inst: MarketInstance, delta: float, gamma: float) -> float:
    """``gamma / sum(B) * delta / (1 + delta)``, below the inverse gradient Lipschitz constant."""
    if not delta > 0 or not 0 < gamma < 1:
        raise ValueError("need delta > 0 and 0 < gamma < 1")
    return gamma / inst.total_budget * delta / (1.0 + delta)


def scaled_step(inst: MarketInstance, delta: float, gamma: float) -> float:
    """Opening step of the ``"scaled"`` mode: ``max(n, m)`` times :func:`default_step`.

    The theoretical step uses the whole budget as curvature scale. Near an
    equilibrium the curvature is set by single prices (about ``sum(B)/m``)
    or, when agents outnumber chores, by the few agents split between
    chores (each about ``sum(B)/n``). The opening is a heuristic; the
    halving rule in :func:`solve_sgr` pulls it back when ``F_delta`` rises.
    """
    return max(1, inst.n, inst.m) * default_step(inst, delta, gamma)


@dataclass
class SgrConfig:
    eps: float = 1e-2
    delta_mode: object = "heuristic"  # "heuristic", "theoretical" or a float
    gamma: float = 0.99
    max_iter: int = 200_000
    floor_a: float | None = None  # None: the smoothed floor mu_lower_delta
    initial_mu: np.ndarray | None = None
    keep_iterates: bool = False
    check_descent: bool = False
    step_mode: object = "scaled"  # "scaled", "theoretical" or a float
    time_limit_s: float | None = None

    def __post_init__(self):
        if not 0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 1/2)")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if isinstance(self.step_mode, str):
            if self.step_mode not in ("scaled", "theoretical"):
                raise ValueError(f"unknown step mode {self.step_mode!r}")
        elif not float(self.step_mode) > 0:
            raise ValueError("step must be positive")

    def delta_for(self, m: int) -> float:
        if isinstance(self.delta_mode, str):
            return default_delta(self.eps, m, self.delta_mode)
        delta = float(self.delta_mode)
        if not delta > 0:
            raise ValueError("delta must be positive")
        return delta

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "delta_mode": self.delta_mode,
            "gamma": self.gamma,
            "max_iter": self.max_iter,
            "floor_a": self.floor_a,
            "step_mode": self.step_mode,
            "time_limit_s": self.time_limit_s,
        }


class DescentViolation(AssertionError):
    pass


def solve_sgr(inst: MarketInstance, cfg: SgrConfig | None = None) -> SolveResult:
    """Run the smoothed gradient method with rounding.

    The step is constant for ``step_mode="theoretical"`` or a float. In the
    default ``"scaled"`` mode it opens at :func:`scaled_step` and is halved
    each time ``F_delta`` goes up from one rounded iterate to the next, never
    going below the theoretical value.

    With ``check_descent`` the run asserts, every iteration, that rounding
    does not increase ``F_delta`` and that the gradient step decreases it by
    at least ``step/2 * ||grad||^2`` (slack 1e-9). Only the theoretical step
    guarantees this.
    """
    cfg = cfg or SgrConfig()
    delta = cfg.delta_for(inst.m)
    floor_step = default_step(inst, delta, cfg.gamma)
    if cfg.step_mode == "theoretical":
        step = floor_step
    elif cfg.step_mode == "scaled":
        step = scaled_step(inst, delta, cfg.gamma)
    else:
        step = float(cfg.step_mode)
    adaptive = cfg.step_mode == "scaled"
    b = inst.total_budget
    a = mu_lower_delta(inst, delta) if cfg.floor_a is None else cfg.floor_a
    mu = uniform_start(inst) if cfg.initial_mu is None else np.array(cfg.initial_mu, dtype=float)
    trace = SolverTrace(iterates=[] if cfg.keep_iterates else None)
    t0 = time.perf_counter()
    best = None
    converged = False
    status = "max_iter"
    prev = None  # (F_delta at the last rounded point, its gradient, step taken)
    halvings = 0
    kernel = SmoothedKernel(inst, delta)
    for k in range(cfg.max_iter + 1):
        mu_hat = round_mu(a, mu, b).mu
        F, F_delta, grad, q = kernel.state(mu_hat)
        measure = float(np.max(np.abs(grad) / q))
        if cfg.check_descent:
            f_mu = eval_F_delta(inst, mu, delta)
            if F_delta > f_mu + 1e-9 * (1 + abs(f_mu)):
                raise DescentViolation(f"rounding increased F_delta at iteration {k}")
            if prev is not None:
                f_prev, g_prev, s_prev = prev
                if f_mu > f_prev - 0.5 * s_prev * (g_prev @ g_prev) + 1e-9 * (1 + abs(f_prev)):
                    raise DescentViolation(f"gradient step {k} missed the sufficient decrease")
        if adaptive and prev is not None and step > floor_step:
            if F_delta > prev[0] + 1e-12 * (1 + abs(prev[0])):
                step = max(0.5 * step, floor_step)
                halvings += 1
        trace.append(
            TraceRow(
                k=k,
                F=F,
                F_delta=F_delta,
                step_norm=0.0 if prev is None else float(prev[2] * np.linalg.norm(prev[1])),
                measure_max=measure,
                inner_iters=0,
                elapsed_ms=1e3 * (time.perf_counter() - t0),
            )
        )
        if cfg.keep_iterates:
            trace.iterates.append(mu_hat.copy())
        if best is None or measure < best[0]:
            best = (measure, mu_hat)
        if measure < cfg.eps:
            converged = True
            status = "converged"
            break
        if cfg.time_limit_s is not None and time.perf_counter() - t0 > cfg.time_limit_s:
            status = "time_limit"
            break
        prev = (F_delta, grad, step)
        mu = mu_hat - step * grad
    if not converged:
        measure, mu_hat = best
        kernel.state(mu_hat)
    mu_out, v_out = mu_hat, kernel.incomes()
    return SolveResult(
        candidate=extract_equilibrium(inst, mu_out, v_out),
        trace=trace,
        mu=mu_out,
        incomes=v_out,
        converged=converged,
        iterations=k,
        measure=measure,
        config=dict(cfg.to_dict(), delta=delta, step=step, step_halvings=halvings, floor_a=a),
        status=status,
    )
