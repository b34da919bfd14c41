"""First-order solvers for quadratic programs over products of scaled simplices.

The problem solved here is

    minimize   0.5 * || sum_i lam_i - c ||^2 + <logD, lam>
    subject to lam_i >= 0,  sum_j lam_ij = radii[i]   for every row i,

which is the dual of one outer step of the DC algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree
from scipy.special import logsumexp


# PGD attempts an exact support polish this often (0 disables it)
POLISH_EVERY = 25


class MaxIterExceeded(RuntimeError):
    def __init__(self, result):
        super().__init__(
            f"inner solver stopped after {result.iterations} iterations "
            f"with KKT residual {result.kkt_residual:.3e}"
        )
        self.result = result


def project_simplex(v, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w >= 0 : sum(w) = radius}`` (sort based)."""
    v = np.asarray(v, dtype=float)
    return project_rows(v[None, :], np.array([radius], dtype=float))[0]


def project_rows(V: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Row-wise :func:`project_simplex`, O(k log k) per row."""
    V = np.asarray(V, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    n, k = V.shape
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - radii[:, None]
    ind = np.arange(1, k + 1)
    active = U - css / ind > 0
    # `active` is a prefix of True values in every row
    rho = k - 1 - np.argmax(active[:, ::-1], axis=1)
    theta = css[np.arange(n), rho] / (rho + 1)
    return np.maximum(V - theta[:, None], 0.0)


def mirror_step(lam_row, grad_row, step: float) -> np.ndarray:
    """Entropic (multiplicative weights) step on a scaled simplex.

    The row sum of ``lam_row`` is kept; ``lam_row`` must be strictly positive.
    """
    lam_row = np.asarray(lam_row, dtype=float)
    grad_row = np.asarray(grad_row, dtype=float)
    radius = lam_row.sum()
    logits = np.log(lam_row) - step * grad_row
    return radius * np.exp(logits - logsumexp(logits))


@dataclass
class DualQP:
    c: np.ndarray
    logD: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.logD = np.asarray(self.logD, dtype=float)
        self.radii = np.asarray(self.radii, dtype=float)
        n, m = self.logD.shape
        if self.c.shape != (m,) or self.radii.shape != (n,):
            raise ValueError("inconsistent DualQP dimensions")
        if np.any(self.radii <= 0):
            raise ValueError("radii must be positive")

    @property
    def shape(self):
        return self.logD.shape

    def objective(self, lam: np.ndarray) -> float:
        r = lam.sum(axis=0) - self.c
        return float(0.5 * r @ r + np.sum(self.logD * lam))

    def gradient(self, lam: np.ndarray) -> np.ndarray:
        return (lam.sum(axis=0) - self.c)[None, :] + self.logD

    def kkt_residual(self, lam: np.ndarray, grad: np.ndarray | None = None) -> float:
        """Norm of the unit-step projected-gradient map, scaled by ``1 + ||c||``."""
        if grad is None:
            grad = self.gradient(lam)
        gap = lam - project_rows(lam - grad, self.radii)
        return float(np.linalg.norm(gap) / (1.0 + np.linalg.norm(self.c)))

    def uniform_point(self) -> np.ndarray:
        n, m = self.shape
        return np.repeat((self.radii / m)[:, None], m, axis=1)


@dataclass
class InnerSolveResult:
    lam: np.ndarray
    kkt_residual: float
    iterations: int
    converged: bool
    objective: float


def polish(qp: DualQP, lam: np.ndarray, tight_tol: float = 1e-12):
    """Try to turn an approximate minimizer into an exact one.

    The support of ``lam`` is taken as the set of active pairs. With
    ``mu = c - sum_i lam_i`` the optimality conditions read: every row
    spends only on its maximizers of ``mu_j - logD_ij``, and each connected
    block of the support balances its radii against ``c - mu``. A spanning
    forest of the support (heaviest entries first) fixes ``mu`` up to one
    constant per block, the balance fixes the constant, and a max flow on
    the tight pairs recovers the rows. Returns the polished ``lam`` or
    ``None`` when any condition fails.
    """
    n, m = qp.shape
    rows, cols = np.nonzero(lam > 0)
    if rows.size == 0:
        return None
    # bipartite graph: agents 0..n-1, chores n..n+m-1; pairs closest to
    # their row's maximum of mu_j - logD_ij go into the forest first
    scores = (qp.c - lam.sum(axis=0))[None, :] - qp.logD
    gap = scores.max(axis=1)[rows] - scores[rows, cols]
    w = 1.0 + gap / (1.0 + gap.max())
    G = coo_matrix((w, (rows, n + cols)), shape=(n + m, n + m)).tocsr()
    forest = minimum_spanning_tree(G)
    forest = forest + forest.T
    ncomp, label = connected_components(forest, directed=False)
    pot = np.full(n + m, np.nan)
    logD = qp.logD
    for comp in range(ncomp):
        nodes = np.flatnonzero(label == comp)
        root = nodes[0]
        order, pred = breadth_first_order(forest, root, directed=False, return_predecessors=True)
        pot[root] = 0.0
        for v in order[1:]:
            u = pred[v]
            # mu_j - t_i = logD_ij along every forest edge
            if v >= n:
                pot[v] = pot[u] + logD[u, v - n]
            else:
                pot[v] = pot[u] - logD[v, u - n]
    mu = qp.c.copy()
    t = np.empty(n)
    for comp in range(ncomp):
        nodes = np.flatnonzero(label == comp)
        agents = nodes[nodes < n]
        chores = nodes[nodes >= n] - n
        if agents.size == 0 or chores.size == 0:
            if agents.size:
                return None
            continue
        shift = (np.sum(qp.c[chores] - pot[n + chores]) - qp.radii[agents].sum()) / chores.size
        mu[chores] = pot[n + chores] + shift
        t[agents] = pot[agents] + shift
    s = qp.c - mu
    scores = mu[None, :] - logD - t[:, None]
    scale = 1.0 + np.abs(mu).max() + np.abs(logD).max()
    if np.any(scores > tight_tol * scale) or np.any(s < -tight_tol * (1.0 + np.abs(qp.c).max())):
        return None
    tight = scores >= -tight_tol * scale
    g = nx.DiGraph()
    for i in range(n):
        g.add_edge("s", ("a", i), capacity=float(qp.radii[i]))
    for j in np.flatnonzero(s > 0):
        g.add_edge(("c", j), "t", capacity=float(s[j]))
    ti, tj = np.nonzero(tight & (s > 0)[None, :])
    for i, j in zip(ti, tj):
        g.add_edge(("a", i), ("c", j))
    value, flow = nx.maximum_flow(g, "s", "t")
    total = qp.radii.sum()
    if value < total * (1.0 - 1e-12):
        return None
    out = np.zeros((n, m))
    for i, j in zip(ti, tj):
        out[i, j] = flow[("a", i)][("c", j)]
    out *= (qp.radii / out.sum(axis=1))[:, None]
    return out


# log-weights are kept above this; the entry is then below 1e-304 of its row
LOG_WEIGHT_FLOOR = -700.0


def _bregman_terms(x):
    """``x*exp(x) - expm1(x)``, the KL divergence per unit of old weight.

    Written out directly it cancels badly near convergence, where it is
    about ``x**2/2``, so small arguments use the series.
    """
    small = np.abs(x) < 1e-3
    xs = np.where(small, x, 0.0)
    series = xs * xs * (0.5 + xs * (1.0 / 3.0 + xs * (0.125 + xs / 30.0)))
    xl = np.where(small, 0.0, x)
    return np.where(small, series, xl * np.exp(xl) - np.expm1(xl))


def _mirror_descent(qp: DualQP, lam0, tol, max_iter, history):
    n, m = qp.shape
    lam = qp.uniform_point() if lam0 is None else np.array(lam0, dtype=float)
    # log-domain weights; rows of lam never reach exact zero
    with np.errstate(divide="ignore"):
        W = np.log(lam)
    W = np.maximum(W, LOG_WEIGHT_FLOOR)
    W = W - logsumexp(W, axis=1, keepdims=True)
    lam = qp.radii[:, None] * np.exp(W)
    step = 1.0 / (n * qp.radii.max())
    s = lam.sum(axis=0) - qp.c
    grad = s[None, :] + qp.logD
    res = qp.kkt_residual(lam, grad)
    it = 0
    while res > tol and it < max_iter:
        it += 1
        step *= 2.0
        while True:
            W_new = W - step * (grad - grad.min(axis=1, keepdims=True))
            W_new -= logsumexp(W_new, axis=1, keepdims=True)
            W_new = np.maximum(W_new, LOG_WEIGHT_FLOOR)
            W_new -= logsumexp(W_new, axis=1, keepdims=True)
            x = W_new - W
            # change of the column sums and the Bregman distance, both
            # formed from the ratios so that roundoff does not dominate
            diff = np.sum(lam * np.expm1(x), axis=0)
            kl = np.sum(lam * _bregman_terms(x))
            if 0.5 * diff @ diff <= kl / step or step < 1e-300:
                break
            step *= 0.5
        W = W_new
        lam = qp.radii[:, None] * np.exp(W)
        s = lam.sum(axis=0) - qp.c
        grad = s[None, :] + qp.logD
        res = qp.kkt_residual(lam, grad)
        if history is not None:
            history.append(qp.objective(lam))
    return lam, res, it


def _projected_gradient(qp: DualQP, lam0, tol, max_iter, history, polish_every=POLISH_EVERY):
    n, m = qp.shape
    tried = None
    lam = qp.uniform_point() if lam0 is None else project_rows(np.array(lam0, dtype=float), qp.radii)
    scale = 1.0 + np.linalg.norm(qp.c)
    grad = qp.gradient(lam)
    res = qp.kkt_residual(lam, grad)
    step = 1.0 / n
    it = 0
    while res > tol and it < max_iter:
        it += 1
        while True:
            lam_new = project_rows(lam - step * grad, qp.radii)
            delta = lam_new - lam
            col = delta.sum(axis=0)
            dd = np.sum(delta * delta)
            cc = col @ col
            if cc <= dd / step or step <= 1.0 / n:
                break
            # a rejected trial has dd/cc < step; retry there
            step = max(min(0.5 * step, dd / cc), 1.0 / n)
        # ||lam - P(lam - s*grad)|| grows with s while its ratio to s shrinks,
        # so this step bounds the unit-step residual at the current point
        bound = np.sqrt(dd) * max(1.0, 1.0 / step) / scale
        if bound <= tol:
            # report the exact value, which the bound already certifies
            res = qp.kkt_residual(lam, grad)
            break
        # Barzilai-Borwein guess for the next trial step (never below 1/n)
        step = max(dd / cc if cc > 0 else 1.0 / n, 1.0 / n)
        lam = lam_new
        grad = qp.gradient(lam)
        res = np.inf
        if history is not None:
            history.append(qp.objective(lam))
        if polish_every and it % polish_every == 0:
            support = np.packbits(lam > 0).tobytes()
            if support != tried:
                tried = support
                exact = polish(qp, lam)
                if exact is not None:
                    r_exact = qp.kkt_residual(exact)
                    if r_exact <= tol and qp.objective(exact) <= qp.objective(lam) + 1e-12 * (1 + abs(qp.objective(lam))):
                        lam, res = exact, r_exact
                        break
    if np.isinf(res):
        res = qp.kkt_residual(lam, grad)
    return lam, res, it


def _forest_solve(qp: DualQP, F: np.ndarray):
    """Stationary point of the QP restricted to the forest support ``F``.

    On every pair of ``F`` the row's score ``mu_j - logD_ij`` equals the row
    level ``t_i``; each connected block hands out exactly its radii, so
    ``sum (c_j - mu_j)`` over its chores equals its radii. Chores outside
    ``F`` keep ``mu_j = c_j``. Flows then follow from the row and column
    sums by peeling leaves. Returns ``(mu, t, lam, label, pred)``.
    """
    n, m = qp.shape
    N = n + m
    rows, cols = np.nonzero(F)
    G = coo_matrix((np.ones(rows.size), (rows, n + cols)), shape=(N, N)).tocsr()
    ncomp, label = connected_components(G, directed=False)
    _, roots = np.unique(label, return_index=True)
    # a virtual node N joined to one root per block gives a single BFS tree
    vr = np.concatenate([rows, np.full(roots.size, N)])
    vc = np.concatenate([n + cols, roots])
    H = coo_matrix((np.ones(vr.size), (vr, vc)), shape=(N + 1, N + 1)).tocsr()
    order, pred = breadth_first_order(H, N, directed=False, return_predecessors=True)
    logD = qp.logD
    pot = np.zeros(N + 1)
    for v, u in zip(order[1:].tolist(), pred[order[1:]].tolist()):
        if u == N:
            continue
        if v >= n:
            pot[v] = pot[u] + logD[u, v - n]
        else:
            pot[v] = pot[u] - logD[v, u - n]
    pot = pot[:N]
    radii_sum = np.bincount(label[:n], weights=qp.radii, minlength=ncomp)
    n_chores = np.bincount(label[n:], minlength=ncomp)
    c_minus = np.bincount(label[n:], weights=qp.c - pot[n:], minlength=ncomp)
    has_agent = np.bincount(label[:n], minlength=ncomp) > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        shift = np.where(has_agent, (c_minus - radii_sum) / np.maximum(n_chores, 1), 0.0)
    level = pot + shift[label]
    mu = np.where(has_agent[label[n:]], level[n:], qp.c)
    t = level[:n]
    # leaf peeling: net[v] is what v must still send towards its parent
    net = np.empty(N)
    net[:n] = qp.radii
    net[n:] = -(qp.c - mu)
    lam = np.zeros((n, m))
    for v, u in zip(order[:0:-1].tolist(), pred[order[:0:-1]].tolist()):
        if u == N:
            continue
        if v < n:
            lam[v, u - n] = net[v]
        else:
            lam[u, v - n] = -net[v]
        net[u] += net[v]
    return mu, t, lam, label, pred


def _tree_path(pred, a, b, N):
    """Nodes on the tree path from ``a`` to ``b`` (both in the same block)."""
    up_a = [a]
    while pred[up_a[-1]] != N:
        up_a.append(pred[up_a[-1]])
    pos = {v: k for k, v in enumerate(up_a)}
    up_b = [b]
    while up_b[-1] not in pos:
        up_b.append(pred[up_b[-1]])
    return up_a[: pos[up_b[-1]] + 1] + up_b[-2::-1]


def _forest_from(qp: DualQP, lam: np.ndarray):
    """Drop cycles from the support of ``lam`` without raising the objective.

    Along a cycle the column sums stay put, so the objective is linear and
    flow can be pushed the cheaper way until some pair empties.
    """
    n, m = qp.shape
    N = n + m
    lam = lam.copy()
    parent = list(range(N))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    F = np.zeros((n, m), dtype=bool)
    for i, j in zip(*np.nonzero(lam > 0)):
        ri, rj = find(i), find(n + j)
        if ri != rj:
            parent[ri] = rj
            F[i, j] = True
            continue
        # (i, j) closes a cycle in the current forest
        while True:
            _, _, _, _, pred = _forest_solve(qp, F)
            path = _tree_path(pred, n + j, i, N)
            edges = [(path[k], path[k + 1]) for k in range(len(path) - 1)]
            pairs = [(u, v - n) if u < n else (v, u - n) for u, v in edges]
            # entering pair (i, j) gets +, the path alternates starting with -
            signs = [-1 if k % 2 == 0 else 1 for k in range(len(pairs))]
            slope = qp.logD[i, j] + sum(sg * qp.logD[a, b] for sg, (a, b) in zip(signs, pairs))
            d = 1 if slope <= 0 else -1
            cand = [(lam[a, b], k) for k, (a, b) in enumerate(pairs) if signs[k] * d < 0]
            theta = min([lam[i, j]] + [v for v, _ in cand]) if d < 0 else min(v for v, _ in cand)
            lam[i, j] += d * theta
            for sg, (a, b) in zip(signs, pairs):
                lam[a, b] += d * sg * theta
            if d < 0 and lam[i, j] <= 0:
                lam[i, j] = 0.0
                break
            k_out = min(cand)[1]
            a, b = pairs[k_out]
            lam[a, b] = 0.0
            F[a, b] = False
            F[i, j] = True
            break
    return np.maximum(lam, 0.0), F


def _active_set(qp: DualQP, lam0, tol, max_iter, history):
    """Primal active-set method over forest supports (a network simplex
    variant for the quadratic column cost). Exact up to rounding."""
    n, m = qp.shape
    N = n + m
    logD = qp.logD
    if lam0 is None:
        best = np.argmax(qp.c[None, :] - logD, axis=1)
        lam = np.zeros((n, m))
        lam[np.arange(n), best] = qp.radii
        F = lam > 0
    else:
        lam = np.maximum(np.array(lam0, dtype=float), 0.0)
        # drop numerical dust so that a forest warm start stays a forest
        lam[lam <= 1e-15 * qp.radii[:, None]] = 0.0
        sums = lam.sum(axis=1)
        if np.any(sums <= 0):
            lam = project_rows(np.array(lam0, dtype=float), qp.radii)
        else:
            lam *= (qp.radii / sums)[:, None]
        lam, F = _forest_from(qp, lam)
    scale = 1.0 + np.abs(qp.c).max() + np.abs(logD).max()
    red_tol = 1e-13 * scale
    it = 0
    while it < max_iter:
        it += 1
        mu, t, target, label, pred = _forest_solve(qp, F)
        neg = F & (target < 0)
        if neg.any():
            D = target - lam
            shrink = F & (D < 0)
            ratios = np.where(shrink, lam / np.where(shrink, -D, 1.0), np.inf)
            alpha = min(1.0, ratios.min())
            lam = lam + alpha * D
            out = shrink & (ratios <= alpha)
            lam[out] = 0.0
            F &= ~out
            lam = np.maximum(lam, 0.0)
            if history is not None:
                history.append(qp.objective(lam))
            continue
        lam = np.where(F, target, 0.0)
        if history is not None:
            history.append(qp.objective(lam))
        R = mu[None, :] - logD - t[:, None]
        R[F] = -np.inf
        flat = int(np.argmax(R))
        i, j = divmod(flat, m)
        if R[i, j] <= red_tol:
            break
        if label[i] != label[n + j]:
            F[i, j] = True
            continue
        # the entering pair closes a cycle: push flow around it
        path = _tree_path(pred, n + j, i, N)
        pairs = [(u, v - n) if u < n else (v, u - n) for u, v in zip(path[:-1], path[1:])]
        minus = pairs[0::2]
        theta, k_out = min((lam[a, b], k) for k, (a, b) in enumerate(minus))
        lam[i, j] += theta
        for k, (a, b) in enumerate(pairs):
            lam[a, b] += theta if k % 2 else -theta
        a, b = minus[k_out]
        lam[a, b] = 0.0
        F[a, b] = False
        F[i, j] = True
    lam = np.maximum(lam, 0.0)
    lam *= (qp.radii / lam.sum(axis=1))[:, None]
    return lam, qp.kkt_residual(lam), it


_METHODS = {"mirror": _mirror_descent, "pgd": _projected_gradient, "active": _active_set}


def solve_dual_qp(
    qp: DualQP,
    method: str = "active",
    tol: float = 1e-10,
    max_iter: int = 100_000,
    lam0=None,
    history: list | None = None,
    raise_on_fail: bool = False,
) -> InnerSolveResult:
    """Minimize the simplex-constrained QP to a KKT residual of ``tol``.

    ``method`` is ``"active"`` (exact active-set pivoting over forest
    supports), ``"pgd"`` (projected gradient with backtracking and periodic
    support polishing) or ``"mirror"`` (entropic mirror descent with an
    adaptive step). All three are monotone. If the active-set run misses
    ``tol`` (rounding trouble or too many pivots), projected gradient
    continues from its point. If ``history`` is a list, the objective after
    every iteration is appended.
    """
    try:
        solver = _METHODS[method]
    except KeyError:
        raise ValueError(f"unknown inner method {method!r}") from None
    lam, res, it = solver(qp, lam0, tol, max_iter, history)
    if method == "active" and res > tol:
        lam, res, more = _projected_gradient(qp, lam, tol, max_iter, history)
        it += more
    result = InnerSolveResult(lam, res, it, res <= tol, qp.objective(lam))
    if raise_on_fail and not result.converged:
        raise MaxIterExceeded(result)
    return result
