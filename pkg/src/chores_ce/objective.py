"""The difference-of-convex objective in log-price coordinates and its smoothing.

With ``mu`` the vector of log prices,

    h_i(mu)  = B_i * max_j (mu_j - log d_ij)
    l(mu)    = sum_i B_i * logsumexp(mu)
    F(mu)    = sum_i h_i(mu) - l(mu)
    F_d(mu)  = d * sum_i B_i * logsumexp((mu - log d_i) / d) - l(mu)

Every log-sum-exp and softmax is max-shifted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp, softmax

from .market import MarketInstance

# relative tolerance for the argmax sets J_i(mu)
TIE_RTOL = 1e-12
ROW_SUM_RTOL = 1e-9


class RowSumViolation(ValueError):
    """An income matrix row does not sum to the agent's budget."""


def _as_mu(inst: MarketInstance, mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (inst.m,):
        raise ValueError(f"mu must have shape ({inst.m},), got {mu.shape}")
    return mu


def argmax_set(scores: np.ndarray, rtol: float = TIE_RTOL) -> np.ndarray:
    top = scores.max()
    return np.flatnonzero(scores >= top - rtol * max(1.0, abs(top)))


def eval_h(inst: MarketInstance, mu, i: int):
    """Return ``(h_i(mu), J_i(mu))``."""
    mu = _as_mu(inst, mu)
    scores = mu - inst.log_d[i]
    return float(inst.B[i] * scores.max()), argmax_set(scores)


def eval_ell(inst: MarketInstance, mu) -> float:
    return inst.total_budget * float(logsumexp(_as_mu(inst, mu)))


def eval_F(inst: MarketInstance, mu) -> float:
    mu = _as_mu(inst, mu)
    h = inst.B @ (mu[None, :] - inst.log_d).max(axis=1)
    return float(h - eval_ell(inst, mu))


def grad_ell(inst: MarketInstance, mu) -> np.ndarray:
    """``q(mu)``: total budget times softmax(mu). These are the implied prices."""
    return inst.total_budget * softmax(_as_mu(inst, mu))


def eval_F_delta(inst: MarketInstance, mu, delta: float) -> float:
    if not delta > 0:
        raise ValueError("delta must be positive")
    mu = _as_mu(inst, mu)
    smooth_max = delta * logsumexp((mu[None, :] - inst.log_d) / delta, axis=1)
    return float(inst.B @ smooth_max - eval_ell(inst, mu))


def smoothed_incomes(inst: MarketInstance, mu, delta: float) -> np.ndarray:
    """``v_ij = B_i * softmax_j((mu_j - log d_ij) / delta)``."""
    mu = _as_mu(inst, mu)
    return inst.B[:, None] * softmax((mu[None, :] - inst.log_d) / delta, axis=1)


def grad_F_delta(inst: MarketInstance, mu, delta: float):
    """Gradient of the smoothed objective and the softmax income matrix.

    Costs O(nm). Returns ``(grad, v)`` with ``grad = v.sum(0) - q(mu)``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    v = smoothed_incomes(inst, mu, delta)
    return v.sum(axis=0) - grad_ell(inst, mu), v


class SmoothedState(NamedTuple):
    F: float
    F_delta: float
    grad: np.ndarray
    incomes: np.ndarray
    q: np.ndarray


def smoothed_state(inst: MarketInstance, mu, delta: float) -> SmoothedState:
    """F, F_delta, the smoothed gradient, softmax incomes and q in one O(nm) pass."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    mu = _as_mu(inst, mu)
    scores = mu[None, :] - inst.log_d
    top = scores.max(axis=1)
    w = np.exp((scores - top[:, None]) / delta)
    z = w.sum(axis=1)
    v = w * (inst.B / z)[:, None]
    lse_mu = float(logsumexp(mu))
    b = inst.total_budget
    q = b * np.exp(mu - lse_mu)
    ell = b * lse_mu
    return SmoothedState(
        F=float(inst.B @ top - ell),
        F_delta=float(inst.B @ (top + delta * np.log(z)) - ell),
        grad=v.sum(axis=0) - q,
        incomes=v,
        q=q,
    )


class SmoothedKernel:
    """Repeated evaluations of the smoothed objective for one ``delta``.

    Keeps ``log d / delta`` in chore-major layout (reductions per agent then
    run along the long axis) and one work array, and forms the income
    matrix only on request.
    """

    def __init__(self, inst: MarketInstance, delta: float):
        if not delta > 0:
            raise ValueError("delta must be positive")
        self.inst = inst
        self.delta = float(delta)
        self._scaled_log_d = np.ascontiguousarray(inst.log_d.T) / delta
        self._work = np.empty_like(self._scaled_log_d)
        self._row_weight = None

    def state(self, mu: np.ndarray):
        """``(F, F_delta, grad, q)`` at ``mu``; :meth:`incomes` then refers to ``mu``."""
        inst, delta, W = self.inst, self.delta, self._work
        np.subtract((mu / delta)[:, None], self._scaled_log_d, out=W)
        top = W.max(axis=0)
        W -= top
        np.exp(W, out=W)
        z = W.sum(axis=0)
        self._row_weight = inst.B / z
        lse_mu = float(logsumexp(mu))
        b = inst.total_budget
        q = b * np.exp(mu - lse_mu)
        ell = b * lse_mu
        hi = inst.B @ top
        return (
            float(delta * hi - ell),
            float(delta * (hi + inst.B @ np.log(z)) - ell),
            W @ self._row_weight - q,
            q,
        )

    def incomes(self) -> np.ndarray:
        return (self._work * self._row_weight).T.copy()


def tie_incomes(inst: MarketInstance, mu) -> np.ndarray:
    """Canonical element of each ``dh_i(mu)``: B_i spread evenly over J_i(mu)."""
    mu = _as_mu(inst, mu)
    v = np.zeros((inst.n, inst.m))
    for i in range(inst.n):
        J = argmax_set(mu - inst.log_d[i])
        v[i, J] = inst.B[i] / len(J)
    return v


def check_row_sums(inst: MarketInstance, incomes, rtol: float = ROW_SUM_RTOL) -> np.ndarray:
    incomes = np.asarray(incomes, dtype=float)
    if incomes.shape != (inst.n, inst.m):
        raise ValueError(f"incomes must have shape ({inst.n}, {inst.m}), got {incomes.shape}")
    rows = incomes.sum(axis=1)
    if np.any(np.abs(rows - inst.B) > rtol * inst.B):
        worst = int(np.argmax(np.abs(rows - inst.B) / inst.B))
        raise RowSumViolation(f"row {worst} sums to {rows[worst]!r}, budget is {inst.B[worst]!r}")
    if np.any(incomes < 0):
        raise RowSumViolation("incomes must be nonnegative")
    return incomes


@dataclass
class SubgradientReport:
    u: np.ndarray
    q: np.ndarray
    measure: np.ndarray

    @property
    def max_measure(self) -> float:
        return float(self.measure.max())


def subgradient_F(inst: MarketInstance, mu, incomes) -> SubgradientReport:
    """``u = sum_i v_i - q(mu)``: the value of unallocated chores.

    It lies in the subdifferential of F when each row v_i is in dh_i(mu).
    """
    incomes = check_row_sums(inst, incomes)
    q = grad_ell(inst, mu)
    u = incomes.sum(axis=0) - q
    return SubgradientReport(u=u, q=q, measure=np.abs(u) / q)


def log_cost_spread(inst: MarketInstance) -> float:
    """``log(max d / min d)``."""
    return float(inst.log_d.max() - inst.log_d.min())


def mu_lower(inst: MarketInstance) -> float:
    """Log-price floor below which no agent's argmax set can contain a chore."""
    return float(np.log(inst.total_budget / inst.m) - log_cost_spread(inst))


def mu_lower_delta(inst: MarketInstance, delta: float) -> float:
    """Floor used by the rounding step of the smoothed method."""
    m = inst.m
    if m >= 2 and delta > 1.0 / (2.0 + np.log(m - 1)):
        warnings.warn(
            f"delta={delta} exceeds 1/(2 + log(m-1)); the floor no longer guarantees descent",
            RuntimeWarning,
            stacklevel=2,
        )
    return float(
        np.log(inst.total_budget / (2 * m))
        - (1 + delta) / (1 - delta) * log_cost_spread(inst)
        - delta * np.log(4 * m)
    )


def f_bounds(inst: MarketInstance) -> tuple[float, float]:
    """Lower bound on inf F and upper bound on sup F."""
    b = inst.total_budget
    lower = b * (mu_lower(inst) - inst.log_d.max()) - b * np.log(b)
    upper = b * (np.log(b) - inst.log_d.min()) - b * np.log(b)
    return float(lower), float(upper)


def rescale_to_slice(inst: MarketInstance, mu) -> np.ndarray:
    """Shift ``mu`` so that ``sum(exp(mu)) == sum(B)``; F is shift invariant."""
    mu = _as_mu(inst, mu)
    return mu - logsumexp(mu) + np.log(inst.total_budget)
