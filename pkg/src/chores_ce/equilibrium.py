"""Price/allocation pairs, exact and approximate equilibrium checks, and a
brute-force equilibrium oracle for markets with at most three agents and
three chores.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import networkx as nx
import numpy as np
from scipy.special import logsumexp

from .market import MarketInstance
from .objective import check_row_sums, grad_ell, rescale_to_slice

SUPPORT_RTOL = 1e-9


class NonPositivePrice(ValueError):
    pass


class OracleScaleExceeded(ValueError):
    pass


@dataclass
class EquilibriumCandidate:
    p: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.x = np.asarray(self.x, dtype=float)

    def to_dict(self) -> dict:
        return {"p": self.p.tolist(), "x": self.x.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "EquilibriumCandidate":
        return cls(np.array(obj["p"], dtype=float), np.array(obj["x"], dtype=float))


@dataclass
class VerificationReport:
    eps: float
    passes: bool
    a1_residual: float
    a2_residual: float
    a3_residual: float
    e1_residual: float
    e2_residual: float
    e3_residual: float
    passes_at: float | None = None
    eps_list: list = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max(self.a1_residual, self.a2_residual, self.a3_residual)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_candidate(inst: MarketInstance, cand: EquilibriumCandidate):
    p, x = cand.p, cand.x
    if p.shape != (inst.m,) or x.shape != (inst.n, inst.m):
        raise ValueError("candidate dimensions do not match the market")
    if np.any(~(p > 0)):
        raise NonPositivePrice("all prices must be positive")
    if np.any(x < 0):
        raise ValueError("allocations must be nonnegative")
    return p, x


def extract_equilibrium(inst: MarketInstance, mu, incomes) -> EquilibriumCandidate:
    """Prices ``q(mu)`` and allocation ``x_ij = v_ij / p_j``."""
    incomes = check_row_sums(inst, incomes)
    p = grad_ell(inst, mu)
    return EquilibriumCandidate(p, incomes / p[None, :])


def _ratio_violation(value, target):
    """Smallest eps with (1-eps)*target <= value <= target/(1-eps)."""
    value = np.asarray(value, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.minimum(value / target, target / value)
    return np.where(value > 0, 1.0 - r, 1.0)


def best_response_cost(inst: MarketInstance, p, earned) -> np.ndarray:
    """``min {d_i.y : p.y >= earned_i, y >= 0}`` for every agent."""
    return earned / np.max(p[None, :] / inst.d, axis=1)


def approximate_residuals(inst: MarketInstance, cand: EquilibriumCandidate):
    """Per-condition residuals: the smallest eps for which each condition holds."""
    p, x = _check_candidate(inst, cand)
    earned = x @ p
    a1 = _ratio_violation(earned, inst.B).max()
    cost = np.sum(inst.d * x, axis=1)
    best = best_response_cost(inst, p, earned)
    with np.errstate(divide="ignore", invalid="ignore"):
        a2 = np.where(cost > best, 1.0 - best / cost, 0.0).max()
    a3 = _ratio_violation(x.sum(axis=0), 1.0).max()
    return float(a1), float(a2), float(a3)


def exact_ce_residual(inst: MarketInstance, cand: EquilibriumCandidate):
    """``(e1, e2, e3)``: budget, best-response (ratio gap) and clearing errors."""
    p, x = _check_candidate(inst, cand)
    e1 = float(np.max(np.abs(x @ p - inst.B) / inst.B))
    e3 = float(np.max(np.abs(x.sum(axis=0) - 1.0)))
    ratio = p[None, :] / inst.d
    top = ratio.max(axis=1, keepdims=True)
    gap = (top - ratio) / top
    support = p[None, :] * x > SUPPORT_RTOL * inst.B[:, None] / inst.m
    e2 = float(np.max(np.where(support, gap, 0.0)))
    return e1, e2, e3


def verify_eps_ce(inst: MarketInstance, cand: EquilibriumCandidate, eps: float, eps_list=()) -> VerificationReport:
    """Check the three approximate-equilibrium conditions at accuracy ``eps``.

    The best-response condition uses the closed form: the cheapest bundle
    earning ``p.x_i`` puts everything on a best price-per-disutility chore.
    ``passes_at`` is the smallest value of ``eps_list`` (plus ``eps``) at
    which all three conditions hold.
    """
    a1, a2, a3 = approximate_residuals(inst, cand)
    e1, e2, e3 = exact_ce_residual(inst, cand)
    worst = max(a1, a2, a3)
    grid = sorted(set(float(e) for e in eps_list) | {float(eps)})
    passing = [e for e in grid if worst <= e and e < 1]
    return VerificationReport(
        eps=float(eps),
        passes=bool(worst <= eps < 1),
        a1_residual=a1,
        a2_residual=a2,
        a3_residual=a3,
        e1_residual=e1,
        e2_residual=e2,
        e3_residual=e3,
        passes_at=passing[0] if passing else None,
        eps_list=grid,
    )


def stationarity_residual(inst: MarketInstance, mu, incomes) -> float:
    """Distance from the stationarity system that characterizes equilibria.

    Combines the slice normalization, the clearing equations
    ``sum_i v_ij = exp(mu_j)`` after rescaling to the slice, and the
    subgradient membership of each income row (mass only on argmax chores,
    measured as a relative ratio gap).
    """
    incomes = np.asarray(incomes, dtype=float)
    b = inst.total_budget
    mu_s = rescale_to_slice(inst, mu)
    prices = np.exp(mu_s)
    r_slice = abs(prices.sum() - b) / b
    r_clear = float(np.max(np.abs(incomes.sum(axis=0) - prices) / prices))
    scores = mu_s[None, :] - inst.log_d
    gap = -np.expm1(scores - scores.max(axis=1, keepdims=True))
    support = incomes > SUPPORT_RTOL * inst.B[:, None] / inst.m
    r_member = float(np.max(np.where(support, gap, 0.0)))
    return float(max(r_slice, r_clear, r_member))


def epsilon_prime(inst: MarketInstance, mu, delta: float) -> float:
    """Post hoc accuracy certificate ``1 - 1/r(mu)`` of a smoothed iterate."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    p = grad_ell(inst, mu)
    L = np.log(p)[None, :] - inst.log_d
    log_r = logsumexp((1.0 / delta - 1.0) * L, axis=1) + L.max(axis=1) - logsumexp(L / delta, axis=1)
    r = float(np.exp(log_r.max()))
    return 1.0 - 1.0 / r


# --------------------------------------------------------------------------
# brute-force oracle


def simplex_grid(m: int, steps: int, total: float) -> np.ndarray:
    """All price vectors ``total * k / steps`` with positive integer ``k`` summing to ``steps``."""
    if m == 1:
        return np.array([[total]])
    if m == 2:
        k = np.arange(1, steps)
        return total / steps * np.stack([k, steps - k], axis=1)
    if m == 3:
        k1, k2 = np.meshgrid(np.arange(1, steps), np.arange(1, steps), indexing="ij")
        keep = k1 + k2 < steps
        k1, k2 = k1[keep], k2[keep]
        return total / steps * np.stack([k1, k2, steps - k1 - k2], axis=1)
    raise OracleScaleExceeded(f"grid over {m} chores is not supported")


def _mbb_edges(inst: MarketInstance, P: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Edges (i, j) whose log price-per-disutility is within ``tau`` of agent i's best."""
    L = np.log(P)[:, None, :] - inst.log_d[None, :, :]
    return L >= L.max(axis=2, keepdims=True) - tau[:, None, None]


def _flow_deficit(inst: MarketInstance, P: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """``sum(B) - maxflow`` for budgets -> allowed edges -> prices, by min cut."""
    n = inst.n
    best = np.full(P.shape[0], np.inf)
    for S in itertools.product([False, True], repeat=n):
        S = np.array(S)
        nbrs = edges[:, S, :].any(axis=1)
        cut = inst.B[~S].sum() + np.sum(np.where(nbrs, P, 0.0), axis=1)
        best = np.minimum(best, cut)
    return inst.total_budget - best


def _support_prices(inst: MarketInstance, E: np.ndarray):
    """Prices forced by support graph ``E``: equal ratios on every edge, and
    budgets balanced against prices in each connected component."""
    n, m = inst.n, inst.m
    log_beta = np.full(n, np.nan)
    log_p = np.full(m, np.nan)
    for root in range(n):
        if not np.isnan(log_beta[root]):
            continue
        log_beta[root] = 0.0
        stack, agents, chores = [("a", root)], [root], []
        while stack:
            kind, k = stack.pop()
            if kind == "a":
                for j in np.flatnonzero(E[k]):
                    val = log_beta[k] + inst.log_d[k, j]
                    if np.isnan(log_p[j]):
                        log_p[j] = val
                        chores.append(j)
                        stack.append(("c", j))
                    elif abs(log_p[j] - val) > 1e-9 * (1 + abs(val)):
                        return None
            else:
                for i in np.flatnonzero(E[:, k]):
                    val = log_p[k] - inst.log_d[i, k]
                    if np.isnan(log_beta[i]):
                        log_beta[i] = val
                        agents.append(i)
                        stack.append(("a", i))
                    elif abs(log_beta[i] - val) > 1e-9 * (1 + abs(val)):
                        return None
        # scale so the component's prices add up to its agents' budgets
        scale = np.log(inst.B[agents].sum()) - logsumexp(log_p[chores])
        log_p[chores] += scale
        log_beta[agents] += scale
    if np.any(np.isnan(log_p)):
        return None
    return np.exp(log_p), log_beta


def _flow_allocation(inst: MarketInstance, p: np.ndarray, E: np.ndarray):
    g = nx.DiGraph()
    for i in range(inst.n):
        g.add_edge("s", ("a", i), capacity=float(inst.B[i]))
    for j in range(inst.m):
        g.add_edge(("c", j), "t", capacity=float(p[j]))
    for i, j in zip(*np.nonzero(E)):
        g.add_edge(("a", i), ("c", j))
    value, flow = nx.maximum_flow(g, "s", "t")
    v = np.zeros((inst.n, inst.m))
    for i, j in zip(*np.nonzero(E)):
        v[i, j] = flow[("a", i)][("c", j)]
    return value, v


def _polish(inst: MarketInstance, edges: np.ndarray):
    """Exact equilibria whose support lies inside ``edges``."""
    found = []
    idx = list(zip(*np.nonzero(edges)))
    for r in range(max(inst.n, inst.m), len(idx) + 1):
        for subset in itertools.combinations(idx, r):
            E = np.zeros_like(edges)
            for i, j in subset:
                E[i, j] = True
            if not (E.any(axis=1).all() and E.any(axis=0).all()):
                continue
            solved = _support_prices(inst, E)
            if solved is None:
                continue
            p, log_beta = solved
            # nobody may prefer a chore outside the support
            ratio_gap = np.log(p)[None, :] - inst.log_d - log_beta[:, None]
            if np.any(ratio_gap > 1e-9):
                continue
            value, v = _flow_allocation(inst, p, E)
            if value < inst.total_budget * (1 - 1e-9):
                continue
            found.append(EquilibriumCandidate(p, v / p[None, :]))
    return found


def oracle_ce_small(inst: MarketInstance, grid_resolution: float = 1e-3) -> list[EquilibriumCandidate]:
    """Equilibria of a tiny market by grid search over normalized prices.

    ``grid_resolution`` is the grid spacing as a fraction of ``sum(B)``.
    Grid points where budgets can be routed to near-best chores with a
    small deficit are clustered; each cluster's near-best edge patterns are
    then solved exactly. Candidates whose exact residual exceeds
    ``10 * grid_resolution`` are dropped and near-duplicates merged.
    """
    if inst.n > 3 or inst.m > 3:
        raise OracleScaleExceeded(f"oracle handles n, m <= 3; got n={inst.n}, m={inst.m}")
    b = inst.total_budget
    steps = int(round(1.0 / grid_resolution))
    h = b / steps
    P = simplex_grid(inst.m, steps, b)
    tau = 3.0 * h / P.min(axis=1)
    edges = _mbb_edges(inst, P, tau)
    deficit = _flow_deficit(inst, P, edges)
    keep = np.flatnonzero(deficit <= inst.m * h)
    order = keep[np.argsort(deficit[keep], kind="stable")]

    patterns = {}
    for k in order:
        key = edges[k].tobytes()
        if key not in patterns:
            patterns[key] = edges[k]

    results: list[EquilibriumCandidate] = []
    for E in patterns.values():
        for cand in _polish(inst, E):
            if max(exact_ce_residual(inst, cand)) > 10 * grid_resolution:
                continue
            if any(np.max(np.abs(cand.p - c.p)) <= 10 * h for c in results):
                continue
            results.append(cand)
    results.sort(key=lambda c: tuple(c.p))
    return results
