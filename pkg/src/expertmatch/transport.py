"""Question-to-expert transport distance between nBOW vectors.

``qtoe_exact`` solves the balanced transportation LP

    min sum_ij T_ij * ||x_i - x_j||   s.t.  T 1 = d_q,  T' 1 = d_v,  T >= 0

with a transportation simplex (spanning-tree basis, u-v potentials).
``qtoe_relaxed`` drops one marginal family at a time and keeps the larger of
the two lower bounds.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingTable, NbowVector
from .errors import DimensionMismatch, EmptyDistribution

PRUNE = 1e-12


@dataclass
class TransportPlan:
    source: np.ndarray      # source word indices (rows)
    target: np.ndarray      # target word indices (columns)
    flows: list             # (row position, column position, mass), mass > 0
    objective: float
    duality_gap: float = 0.0

    def dense(self) -> np.ndarray:
        T = np.zeros((len(self.source), len(self.target)))
        for i, j, f in self.flows:
            T[i, j] += f
        return T


def ground_cost(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(f"vector shapes differ: {x.shape} vs {y.shape}")
    return float(np.linalg.norm(x - y))


def cost_matrix(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if xs.shape[1] != ys.shape[1]:
        raise DimensionMismatch("embedding dimensions differ")
    return np.sqrt(((xs[:, None, :] - ys[None, :, :]) ** 2).sum(axis=2))


def _prepare(d: NbowVector):
    if d is None or len(d) == 0:
        raise EmptyDistribution("empty nBOW vector")
    keep = d.weights >= PRUNE
    idx, w = d.indices[keep], d.weights[keep]
    if len(idx) == 0:
        raise EmptyDistribution("all weights pruned")
    return idx, w / w.sum()


# ------------------------------------------------------------ the LP solver

def _initial_basis(a, b, C):
    """Least-cost starting basis that is always a spanning tree (m+n-1 cells)."""
    m, n = C.shape
    ra, rb = a.astype(float).copy(), b.astype(float).copy()
    rows, cols = np.ones(m, bool), np.ones(n, bool)
    n_rows, n_cols = m, n
    masked = C.astype(float).copy()
    basis = []
    while True:
        flat = int(np.argmin(masked))
        i, j = divmod(flat, n)
        q = min(ra[i], rb[j])
        basis.append([i, j, max(q, 0.0)])
        if n_rows == 1 and n_cols == 1:
            break
        row_done = ra[i] <= rb[j]
        ra[i] -= q
        rb[j] -= q
        if (row_done and n_rows > 1) or n_cols == 1:
            rows[i] = False
            n_rows -= 1
            masked[i, :] = np.inf
            ra[i] = 0.0
        else:
            cols[j] = False
            n_cols -= 1
            masked[:, j] = np.inf
            rb[j] = 0.0
    return basis


def _potentials(adj, basis_cost, m, n):
    """Solve u_i + v_j = c_ij on the basis tree (rows 0..m-1, cols m..m+n-1)."""
    pot = [None] * (m + n)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        a = queue.popleft()
        pa = pot[a]
        for b in adj[a]:
            if pot[b] is None:
                pot[b] = basis_cost[(a, b) if a < m else (b, a)] - pa
                queue.append(b)
    pot = np.array(pot, dtype=float)
    return pot[:m], pot[m:]


def _component(adj, start):
    seen = {start}
    stack = [start]
    while stack:
        a = stack.pop()
        for b in adj[a]:
            if b not in seen:
                seen.add(b)
                stack.append(b)
    return seen


def _tree_path(adj, start, goal):
    parent = {start: None}
    queue = deque([start])
    while queue:
        a = queue.popleft()
        if a == goal:
            break
        for b in adj[a]:
            if b not in parent:
                parent[b] = a
                queue.append(b)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def solve_transport(a, b, C, max_iter: int | None = None, tol: float = 1e-12):
    """Exact balanced transportation problem.

    Returns ``(objective, flows, u, v)`` where ``flows`` is a dict
    ``(i, j) -> mass`` over the final basis and ``u, v`` are optimal duals.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    if (m, n) != (len(a), len(b)):
        raise DimensionMismatch("cost matrix does not match marginals")
    b = b * (a.sum() / b.sum())
    scale = max(1.0, float(np.abs(C).max()))
    eps = tol * scale
    if max_iter is None:
        max_iter = 50 * (m + n) ** 2 + 1000

    flow = {}
    adj = [set() for _ in range(m + n)]
    cost = {}
    for i, j, q in _initial_basis(a, b, C):
        flow[(i, m + j)] = q
        cost[(i, m + j)] = C[i, j]
        adj[i].add(m + j)
        adj[m + j].add(i)

    degenerate_run = 0
    bland = False
    u, v = _potentials(adj, cost, m, n)
    for _ in range(max_iter):
        R = C - u[:, None] - v[None, :]
        if bland:
            neg = np.flatnonzero(R.ravel() < -eps)
            if len(neg) == 0:
                break
            i, j = divmod(int(neg[0]), n)
        else:
            flat = int(np.argmin(R))
            i, j = divmod(flat, n)
            if R[i, j] >= -eps:
                break
        # cycle: entering cell, then the tree path from column j back to row i
        path = _tree_path(adj, i, m + j)
        cells = [(path[k], path[k + 1]) if path[k] < m else (path[k + 1], path[k])
                 for k in range(len(path) - 1)]
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min((c for c in minus if flow[c] <= theta), key=lambda c: (c[0], c[1]))
        for c in minus:
            flow[c] = max(flow[c] - theta, 0.0)
        for c in plus:
            flow[c] += theta
        del flow[leaving], cost[leaving]
        adj[leaving[0]].discard(leaving[1])
        adj[leaving[1]].discard(leaving[0])
        # the side holding column j shifts so that u_i + v_j = c_ij afterwards
        shift = R[i, j]
        for node in _component(adj, m + j):
            if node < m:
                u[node] -= shift
            else:
                v[node - m] += shift
        entering = (i, m + j)
        flow[entering] = theta
        cost[entering] = C[i, j]
        adj[i].add(m + j)
        adj[m + j].add(i)
        if theta <= eps:
            degenerate_run += 1
            if degenerate_run > m + n:
                bland = True
        else:
            degenerate_run = 0
    else:
        raise RuntimeError("transportation simplex hit its iteration cap")

    u, v = _potentials(adj, cost, m, n)
    flows = {(i, j - m): f for (i, j), f in flow.items()}
    objective = float(sum(f * C[i, j] for (i, j), f in flows.items()))
    return objective, flows, u, v


def transport_vertex_enumeration(a, b, C) -> float:
    """Brute-force LP optimum over all basic feasible solutions (tiny instances)."""
    a, b, C = np.asarray(a, float), np.asarray(b, float), np.asarray(C, float)
    m, n = C.shape
    if m * n > 9:
        raise ValueError("vertex enumeration is limited to 3x3 instances")
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A[m + j, j::n] = 1.0
    rhs = np.concatenate([a, b * (a.sum() / b.sum())])
    A, rhs = A[:-1], rhs[:-1]  # one constraint is redundant
    k = m + n - 1
    best = np.inf
    for cols in itertools.combinations(range(m * n), k):
        sub = A[:, cols]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, rhs)
        if np.all(x >= -1e-12):
            best = min(best, float(C.ravel()[list(cols)] @ x))
    return best


# -------------------------------------------------------------- QtoE wrappers

def _costs(d_q, d_v, embeddings: EmbeddingTable):
    qi, qw = _prepare(d_q)
    vi, vw = _prepare(d_v)
    return qi, qw, vi, vw, cost_matrix(embeddings.vectors[qi], embeddings.vectors[vi])


def qtoe_exact(d_q: NbowVector, d_v: NbowVector, embeddings: EmbeddingTable):
    """Exact transport distance and an optimal plan (support words only)."""
    qi, qw, vi, vw, C = _costs(d_q, d_v, embeddings)
    obj, flows, u, v = solve_transport(qw, vw, C)
    dual = float(qw @ u + (vw * (qw.sum() / vw.sum())) @ v)
    plan = TransportPlan(qi, vi, [(i, j, f) for (i, j), f in sorted(flows.items()) if f > 0],
                         obj, abs(obj - dual))
    return obj, plan


def relaxed_bounds(a, b, C) -> tuple[float, float]:
    """(row relaxation, column relaxation) lower bounds."""
    return float(a @ C.min(axis=1)), float(b @ C.min(axis=0))


def qtoe_relaxed(d_q: NbowVector, d_v: NbowVector, embeddings: EmbeddingTable) -> float:
    _, qw, _, vw, C = _costs(d_q, d_v, embeddings)
    return max(relaxed_bounds(qw, vw, C))
