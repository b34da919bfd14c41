"""DC algorithm for the log-price objective, plain and with rounding.

Each outer step linearizes ``g(mu) = l(mu) + eta/2 ||mu||^2`` at the current
point and minimizes ``sum_i h_i(mu) + eta/2 ||mu||^2 - <grad g(mu^k), mu>``
through its dual, a QP over scaled simplices (see :mod:`.simplex`). The
primal point is recovered as ``mu^{k+1} = grad g(mu^k)/eta - sum_i lam_i`` and
``eta * lam`` is an income matrix whose rows sum to the budgets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import EquilibriumCandidate, extract_equilibrium
from .market import MarketInstance
from .objective import eval_F, grad_ell, mu_lower
from .rounding import round_mu
from .simplex import DualQP, InnerSolveResult, solve_dual_qp
from .trace import SolverTrace, TraceRow


class InsufficientTrace(ValueError):
    pass


def default_inner_tol(step_norm: float | None) -> float:
    """Inner tolerance tightened with outer progress, clipped to [1e-12, 1e-8]."""
    if step_norm is None:
        return 1e-8
    return max(1e-12, min(1e-8, 0.01 * step_norm**2))


@dataclass
class DcaConfig:
    eps: float = 1e-2
    reg_eta: float | None = None  # None: n/m
    max_outer: int = 5000
    inner_method: str = "active"
    inner_tol: object = default_inner_tol  # callable(step_norm) or a fixed float
    inner_max_iter: int = 20_000
    rounding: bool = False
    floor_a: float | None = None  # None: mu_lower - 1 when rounding
    initial_mu: np.ndarray | None = None
    keep_iterates: bool = False
    time_limit_s: float | None = None

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.reg_eta is not None and not self.reg_eta > 0:
            raise ValueError("reg_eta must be positive")

    def eta_for(self, inst: MarketInstance) -> float:
        return self.reg_eta if self.reg_eta is not None else inst.n / inst.m

    def tol_for(self, step_norm) -> float:
        if callable(self.inner_tol):
            return self.inner_tol(step_norm)
        return float(self.inner_tol)

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "reg_eta": self.reg_eta,
            "max_outer": self.max_outer,
            "inner_method": self.inner_method,
            "inner_tol": "adaptive" if callable(self.inner_tol) else self.inner_tol,
            "inner_max_iter": self.inner_max_iter,
            "rounding": self.rounding,
            "floor_a": self.floor_a,
            "time_limit_s": self.time_limit_s,
        }


@dataclass
class SolveResult:
    """Outcome of a solver run.

    ``status`` is ``"converged"``, ``"max_iter"`` or ``"time_limit"``. Without
    convergence the candidate comes from the best-measure iterate.
    """

    candidate: EquilibriumCandidate
    trace: SolverTrace
    mu: np.ndarray
    incomes: np.ndarray
    converged: bool
    iterations: int
    measure: float
    config: dict = field(default_factory=dict)
    status: str = "converged"


def uniform_start(inst: MarketInstance) -> np.ndarray:
    """The point with equal log prices and ``sum(exp(mu)) == sum(B)``."""
    return np.full(inst.m, np.log(inst.total_budget / inst.m))


def grad_g(inst: MarketInstance, mu, reg_eta: float) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    return grad_ell(inst, mu) + reg_eta * mu


def dca_step(inst: MarketInstance, mu, reg_eta: float, tol: float, lam0=None, method="pgd", max_iter=20_000):
    """One outer step from ``mu``; returns ``(mu_next, incomes, inner_result)``."""
    c = grad_g(inst, mu, reg_eta) / reg_eta
    qp = DualQP(c, inst.log_d, inst.B / reg_eta)
    inner: InnerSolveResult = solve_dual_qp(qp, method=method, tol=tol, max_iter=max_iter, lam0=lam0)
    mu_next = c - inner.lam.sum(axis=0)
    return mu_next, reg_eta * inner.lam, inner


def _run(inst: MarketInstance, cfg: DcaConfig) -> SolveResult:
    eta = cfg.eta_for(inst)
    b = inst.total_budget
    mu = uniform_start(inst) if cfg.initial_mu is None else np.array(cfg.initial_mu, dtype=float)
    if cfg.rounding:
        a = mu_lower(inst) - 1.0 if cfg.floor_a is None else cfg.floor_a
    trace = SolverTrace(iterates=[mu.copy()] if cfg.keep_iterates else None)
    t0 = time.perf_counter()
    lam = None
    step_norm = None
    best = None
    converged = False
    status = "max_iter"
    k = 0
    for k in range(1, cfg.max_outer + 1):
        base = round_mu(a, mu, b).mu if cfg.rounding else mu
        mu_next, incomes, inner = dca_step(
            inst, base, eta, cfg.tol_for(step_norm), lam, cfg.inner_method, cfg.inner_max_iter
        )
        lam = inner.lam
        u = grad_g(inst, base, eta) - grad_g(inst, mu_next, eta)
        # the rounded variant divides by the prices at the rounded point
        q = grad_ell(inst, base if cfg.rounding else mu_next)
        measure = float(np.max(np.abs(u) / q))
        step_norm = float(np.linalg.norm(mu_next - base))
        trace.append(
            TraceRow(
                k=k,
                F=eval_F(inst, mu_next),
                F_delta=None,
                step_norm=step_norm,
                measure_max=measure,
                inner_iters=inner.iterations,
                elapsed_ms=1e3 * (time.perf_counter() - t0),
            )
        )
        if cfg.keep_iterates:
            trace.iterates.append(mu_next.copy())
        if best is None or measure < best[0]:
            best = (measure, mu_next, incomes, k)
        mu = mu_next
        if measure <= cfg.eps if not cfg.rounding else measure < cfg.eps:
            converged = True
            status = "converged"
            break
        if cfg.time_limit_s is not None and time.perf_counter() - t0 > cfg.time_limit_s:
            status = "time_limit"
            break
    if converged:
        measure, mu_out, inc_out, k_out = measure, mu, incomes, k
    else:
        measure, mu_out, inc_out, k_out = best
    return SolveResult(
        candidate=extract_equilibrium(inst, mu_out, inc_out),
        trace=trace,
        mu=mu_out,
        incomes=inc_out,
        converged=converged,
        iterations=k,
        measure=measure,
        config=dict(cfg.to_dict(), reg_eta=eta),
        status=status,
    )


def solve_dca(inst: MarketInstance, cfg: DcaConfig | None = None) -> SolveResult:
    """Plain DCA stopped once ``max_j |u_j / q_j(mu^k)| <= eps``.

    ``u^k = grad g(mu^{k-1}) - grad g(mu^k)`` equals ``sum_i v_i - q(mu^k)`` for
    the recovered incomes, so the stop certifies an eps-equilibrium whenever
    the incomes are supported on best chores.
    """
    cfg = cfg or DcaConfig()
    if cfg.rounding:
        cfg = DcaConfig(**{**cfg.__dict__, "rounding": False})
    return _run(inst, cfg)


def solve_rounded_dca(inst: MarketInstance, cfg: DcaConfig | None = None) -> SolveResult:
    """DCA with a rounding step before every outer step (floor ``mu_lower - 1`` by default)."""
    cfg = cfg or DcaConfig()
    if not cfg.rounding:
        cfg = DcaConfig(**{**cfg.__dict__, "rounding": True})
    return _run(inst, cfg)


def fit_rate_from_distances(dist, window: int | None = None, floor: float = 0.0):
    """Least-squares fit of ``log(dist_k)`` against ``k``; returns ``(rho, r_squared)``.

    Trailing distances at or below ``floor`` are discarded first, then the last
    ``window`` values are used.
    """
    dist = np.asarray(dist, dtype=float)
    k = np.arange(dist.size)
    ok = dist > floor
    if not ok.any():
        raise InsufficientTrace("every distance is below the floor")
    last = np.flatnonzero(ok)[-1]
    k, dist = k[: last + 1], dist[: last + 1]
    if window is not None:
        k, dist = k[-window:], dist[-window:]
    if dist.size < 3 or np.any(dist <= floor):
        raise InsufficientTrace(f"need at least 3 usable distances, have {dist.size}")
    y = np.log(dist)
    slope, intercept = np.polyfit(k, y, 1)
    resid = y - (slope * k + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - np.sum(resid**2) / ss_tot
    return float(np.exp(slope)), float(r2)


def fit_linear_rate(trace_or_iterates, window: int = 30, min_len: int = 20):
    """Empirical R-linear rate of an iterate sequence.

    Distances ``||mu^k - mu^K||`` to the final iterate are fitted on a log
    scale over the last ``window`` iterations that are above the rounding
    noise floor. Returns ``(rho, r_squared)``.
    """
    its = trace_or_iterates.iterates if isinstance(trace_or_iterates, SolverTrace) else trace_or_iterates
    if its is None:
        raise InsufficientTrace("trace has no stored iterates (use keep_iterates=True)")
    its = np.asarray(its, dtype=float)
    if its.shape[0] < min_len + 1:
        raise InsufficientTrace(f"need at least {min_len + 1} iterates, have {its.shape[0]}")
    final = its[-1]
    dist = np.linalg.norm(its[:-1] - final, axis=1)
    floor = 1e-11 * (1.0 + np.linalg.norm(final))
    return fit_rate_from_distances(dist, window, floor)
