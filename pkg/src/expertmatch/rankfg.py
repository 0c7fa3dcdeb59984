"""Ranking factor graph: per-question binary MRF over candidate experts.

Every candidate ``i`` gets a binary variable ``y_i`` (1 = agree) with a local
factor ``exp(alpha . psi_i)`` active at ``y_i = 1``, and every related pair
gets a pairwise factor ``exp(sum_l beta_l)`` over the relation kinds ``l`` it
carries, active when ``y_i == y_j``.  So ``P(Y) = exp(theta . Phi(Y)) / Z``.

Inference is loopy belief propagation in the log domain.  Each sweep picks a
random root per connected component, runs BFS over the factor graph, and
updates messages leaves-to-root then root-to-leaves.  Adjacent nodes of a
bipartite BFS differ in depth by exactly one, so all messages leaving one
depth level are independent and are updated together; many question graphs
are processed as one batch.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import Diverged, FormatError, NoCandidates, NotConverged, UnlabeledVariable
from .features import CORRELATION_FEATURES, LOCAL_FEATURES

log = logging.getLogger(__name__)

N_LOCAL = len(LOCAL_FEATURES)
N_CORR = len(CORRELATION_FEATURES)
N_PARAMS = N_LOCAL + N_CORR
EXACT_MAX_VARS = 20
_LOG_HALF = np.log(0.5)


@dataclass
class Params:
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(N_LOCAL))
    beta: np.ndarray = field(default_factory=lambda: np.zeros(N_CORR))

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(N_LOCAL)
        self.beta = np.asarray(self.beta, dtype=float).reshape(N_CORR)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta])

    @classmethod
    def from_theta(cls, theta):
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:N_LOCAL].copy(), theta[N_LOCAL:].copy())


@dataclass
class FactorGraph:
    """Variables are candidates (in ``candidates`` order); factors are local
    (one per variable) and pairwise (one per related pair)."""

    question_id: str
    candidates: list[str]
    features: np.ndarray          # (n, N_LOCAL) raw local features
    pairs: np.ndarray             # (F, 2) variable positions, i < j
    kinds: np.ndarray             # (F, N_CORR) 0/1 relation indicators
    labels: np.ndarray | None = None
    # message store, log domain, normalized; row 2f+s is the edge between
    # pairwise factor f and its endpoint s
    msg_var_to_factor: np.ndarray | None = None
    msg_factor_to_var: np.ndarray | None = None

    @property
    def n_variables(self) -> int:
        return len(self.candidates)

    @property
    def n_local_factors(self) -> int:
        return len(self.candidates)

    @property
    def n_pair_factors(self) -> int:
        return len(self.pairs)

    def is_acyclic(self) -> bool:
        n = self.n_variables
        if len(self.pairs) == 0:
            return True
        adj = sparse.coo_matrix((np.ones(len(self.pairs)), (self.pairs[:, 0], self.pairs[:, 1])),
                                shape=(n, n))
        n_comp, _ = csgraph.connected_components(adj, directed=False)
        return len(self.pairs) == n - n_comp

    def local_scores(self, params: Params) -> np.ndarray:
        return self.features @ params.alpha

    def pair_weights(self, params: Params) -> np.ndarray:
        return self.kinds @ params.beta


def build_factor_graph(question_id, candidates, relations, features, labels=None) -> FactorGraph:
    """``relations``: RelationEdge objects or ``(a, b, kind)`` tuples; edges
    touching non-candidates are ignored, and several kinds on one pair share a
    single pairwise factor."""
    candidates = list(candidates)
    pos = {c: i for i, c in enumerate(candidates)}
    merged: dict[tuple[int, int], np.ndarray] = {}
    for rel in relations:
        a, b, kind = (rel.expert_a, rel.expert_b, rel.kind) if hasattr(rel, "kind") else rel
        if a not in pos or b not in pos or a == b:
            continue
        key = tuple(sorted((pos[a], pos[b])))
        merged.setdefault(key, np.zeros(N_CORR))[CORRELATION_FEATURES.index(kind)] = 1.0
    keys = sorted(merged)
    pairs = np.array(keys, dtype=np.intp).reshape(-1, 2)
    kinds = np.array([merged[k] for k in keys]).reshape(-1, N_CORR)
    return graph_from_arrays(question_id, candidates, pairs, kinds, features, labels)


def graph_from_arrays(question_id, candidates, pairs, kinds, features, labels=None) -> FactorGraph:
    """Factor graph from position pairs ``(F, 2)`` (``i < j``, sorted) and
    merged relation indicators ``(F, N_CORR)``."""
    candidates = list(candidates)
    if not candidates:
        raise NoCandidates(f"question {question_id!r} has no candidates")
    features = np.asarray(features, dtype=float).reshape(len(candidates), N_LOCAL)
    pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    kinds = np.asarray(kinds, dtype=float).reshape(-1, N_CORR)
    if labels is not None:
        labels = np.asarray(labels, dtype=int)
    return FactorGraph(question_id, candidates, features, pairs, kinds, labels)


def sufficient_stats(graph: FactorGraph, labels) -> np.ndarray:
    y = np.asarray(labels)
    local = y @ graph.features
    if len(graph.pairs):
        agree = (y[graph.pairs[:, 0]] == y[graph.pairs[:, 1]]).astype(float)
        corr = agree @ graph.kinds
    else:
        corr = np.zeros(N_CORR)
    return np.concatenate([local, corr])


# ----------------------------------------------------------------- inference

@dataclass(frozen=True)
class InferenceConfig:
    tolerance: float = 1e-8
    max_sweeps: int = 200
    damping: float = 0.5   # applied on loopy graphs only
    seed: int = 0


@dataclass
class Beliefs:
    marginals: list          # per graph: P(y_i = 1)
    pair_agree: list         # per graph: P(y_i == y_j) for each pairwise factor
    pair_beliefs: list       # per graph: (F, 2, 2) pairwise beliefs
    converged: bool
    residual: float
    sweeps: int


class BeliefPropagation:
    """Batched loopy BP over a list of factor graphs; keeps messages between runs."""

    def __init__(self, graphs: list[FactorGraph]):
        self.graphs = graphs
        n_vars = np.array([g.n_variables for g in graphs])
        n_facs = np.array([g.n_pair_factors for g in graphs])
        self.var_off = np.concatenate([[0], np.cumsum(n_vars)])
        self.fac_off = np.concatenate([[0], np.cumsum(n_facs)])
        N, F = int(self.var_off[-1]), int(self.fac_off[-1])
        self.N, self.F = N, F
        self.X = np.vstack([g.features for g in graphs]) if N else np.zeros((0, N_LOCAL))
        pairs = [g.pairs + off for g, off in zip(graphs, self.var_off[:-1])]
        pairs = np.vstack(pairs) if F else np.zeros((0, 2), dtype=np.intp)
        self.K = np.vstack([g.kinds for g in graphs]) if F else np.zeros((0, N_CORR))
        self.edge_var = pairs.reshape(-1).astype(np.intp)        # edge e = 2f + side
        self.edge_fac = np.repeat(np.arange(F), 2)

        # variable-factor incidence; node ids: vars 0..N-1, factors N..N+F-1
        rows = np.concatenate([self.edge_var, N + self.edge_fac])
        cols = np.concatenate([N + self.edge_fac, self.edge_var])
        inc = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(N + F, N + F)).tocsr()
        self._incidence = inc
        n_comp, comp = csgraph.connected_components(inc, directed=False)
        self.comp_of_var = comp[:N]
        # every component contains at least one variable; pick roots among them
        order = np.argsort(self.comp_of_var, kind="stable")
        bounds = np.searchsorted(self.comp_of_var[order], np.arange(n_comp + 1))
        self._comp_members = [order[bounds[c]:bounds[c + 1]] for c in range(n_comp)]

        graph_of_var = np.repeat(np.arange(len(graphs)), n_vars)
        comps_per_graph = np.zeros(len(graphs), dtype=int)
        np.add.at(comps_per_graph, graph_of_var[[m[0] for m in self._comp_members]], 1)
        self.loopy_graph = n_facs > n_vars - comps_per_graph
        self.loopy_edge = np.repeat(self.loopy_graph[graph_of_var[self.edge_var[0::2]]], 2) \
            if F else np.zeros(0, bool)
        self.all_trees = not self.loopy_graph.any()

        self.m_vf = np.full((2 * F, 2), _LOG_HALF)
        self.m_fv = np.full((2 * F, 2), _LOG_HALF)
        self._load_messages()

    # -- message persistence on the graph objects
    def _load_messages(self):
        for g, fo in zip(self.graphs, self.fac_off[:-1]):
            sl = slice(2 * fo, 2 * (fo + g.n_pair_factors))
            if g.msg_var_to_factor is not None and len(g.msg_var_to_factor) == sl.stop - sl.start:
                self.m_vf[sl] = g.msg_var_to_factor
                self.m_fv[sl] = g.msg_factor_to_var

    def store_messages(self):
        for g, fo in zip(self.graphs, self.fac_off[:-1]):
            sl = slice(2 * fo, 2 * (fo + g.n_pair_factors))
            g.msg_var_to_factor = self.m_vf[sl].copy()
            g.msg_factor_to_var = self.m_fv[sl].copy()

    def reset(self):
        self.m_vf.fill(_LOG_HALF)
        self.m_fv.fill(_LOG_HALF)

    # -- scheduling
    def _depths(self, roots) -> np.ndarray:
        """BFS depth of every node from its component's root, level by level."""
        inc = self._incidence
        depth = np.full(inc.shape[0], -1, dtype=np.int64)
        depth[roots] = 0
        frontier = np.asarray(roots, dtype=np.intp)
        level = 0
        while len(frontier):
            level += 1
            nb = np.unique(inc[frontier].indices)
            frontier = nb[depth[nb] < 0]
            depth[frontier] = level
        return depth

    def _schedule(self, rng):
        N, F = self.N, self.F
        roots = np.array([m[rng.integers(len(m))] for m in self._comp_members], dtype=np.intp)
        depth = self._depths(roots)
        d_var = depth[self.edge_var]
        d_fac = depth[N + self.edge_fac]
        max_d = int(depth.max()) if len(depth) else 0
        up_vf = d_var > d_fac
        # schedule key: upward sends from depth L -> max_d - L; downward -> max_d + L
        key_vf = np.where(up_vf, max_d - d_var, max_d + d_var)
        key_fv = np.where(up_vf, max_d + d_fac, max_d - d_fac)
        keys = np.concatenate([key_vf, key_fv])
        # small non-negative keys: a stable counting sort is cheap
        keys = keys.astype(np.int16 if 2 * max_d < 2 ** 15 else np.int64)
        order = np.argsort(keys, kind="stable")
        cuts = np.flatnonzero(np.diff(keys[order])) + 1
        groups = []
        for chunk in np.split(order, cuts):
            if chunk[0] < 2 * F:
                groups.append(("vf", chunk))
            else:
                groups.append(("fv", chunk - 2 * F))
        return groups

    # -- one run to convergence
    def run(self, params: Params, mode: str = "sum", config: InferenceConfig = InferenceConfig(),
            strict: bool = False) -> tuple[bool, float, int]:
        reduce = np.logaddexp if mode == "sum" else np.maximum
        unary1 = self.X @ params.alpha
        w = self.K @ params.beta
        F = self.F
        if F == 0:
            return True, 0.0, 0
        rng = np.random.default_rng(config.seed)
        edge_var, m_vf, m_fv = self.edge_var, self.m_vf, self.m_fv
        damp = config.damping
        residual = np.inf
        sweeps = 0
        for sweeps in range(1, config.max_sweeps + 1):
            residual = 0.0
            tot = self._gather(m_fv)
            for kind, e in self._schedule(rng):
                if kind == "vf":
                    v = edge_var[e]
                    new = tot[v] - m_fv[e]
                    new[:, 1] += unary1[v]
                    old = m_vf[e]
                else:
                    src = m_vf[e ^ 1]
                    we = w[e // 2]
                    new = np.empty((len(e), 2))
                    new[:, 0] = reduce(we + src[:, 0], src[:, 1])
                    new[:, 1] = reduce(src[:, 0], we + src[:, 1])
                    old = m_fv[e]
                new -= np.logaddexp(new[:, 0], new[:, 1])[:, None]
                if damp > 0 and not self.all_trees:
                    lp = self.loopy_edge[e]
                    if lp.any():
                        mixed = np.logaddexp(np.log1p(-damp) + new[lp], np.log(damp) + old[lp])
                        new[lp] = mixed - np.logaddexp(mixed[:, 0], mixed[:, 1])[:, None]
                change = np.abs(np.exp(new) - np.exp(old)).max()
                residual = max(residual, float(change))
                if kind == "vf":
                    m_vf[e] = new
                else:
                    tot += self._gather(new - old, edge_var[e])
                    m_fv[e] = new
            # on forests one leaves->root->leaves pass is exact
            if self.all_trees or residual < config.tolerance:
                return True, residual, sweeps
        if strict:
            raise NotConverged(residual)
        log.info("belief propagation stopped after %d sweeps (residual %.3g)", sweeps, residual)
        return False, residual, sweeps

    def _gather(self, msgs, targets=None) -> np.ndarray:
        """Sum of per-edge messages onto their variables, shape (N, 2)."""
        targets = self.edge_var if targets is None else targets
        out = np.zeros((self.N, 2))
        if len(targets):
            out[:, 0] = np.bincount(targets, msgs[:, 0], minlength=self.N)
            out[:, 1] = np.bincount(targets, msgs[:, 1], minlength=self.N)
        return out

    def node_scores(self, params: Params) -> np.ndarray:
        """Unnormalized log beliefs per variable, shape (N, 2)."""
        b = self._gather(self.m_fv)
        b[:, 1] += self.X @ params.alpha
        return b

    def beliefs(self, params: Params, converged=True, residual=0.0, sweeps=0) -> Beliefs:
        b = self.node_scores(params)
        p1 = 1.0 / (1.0 + np.exp(b[:, 0] - b[:, 1]))
        w = self.K @ params.beta
        a, c = self.m_vf[0::2], self.m_vf[1::2]
        s = np.empty((self.F, 2, 2))
        s[:, 0, 0] = w + a[:, 0] + c[:, 0]
        s[:, 1, 1] = w + a[:, 1] + c[:, 1]
        s[:, 0, 1] = a[:, 0] + c[:, 1]
        s[:, 1, 0] = a[:, 1] + c[:, 0]
        s -= s.max(axis=(1, 2), keepdims=True)
        pb = np.exp(s)
        pb /= pb.sum(axis=(1, 2), keepdims=True)
        agree = pb[:, 0, 0] + pb[:, 1, 1]
        vo, fo = self.var_off, self.fac_off
        return Beliefs(
            [p1[vo[k]:vo[k + 1]] for k in range(len(self.graphs))],
            [agree[fo[k]:fo[k + 1]] for k in range(len(self.graphs))],
            [pb[fo[k]:fo[k + 1]] for k in range(len(self.graphs))],
            converged, residual, sweeps,
        )

    def expected_stats(self, params: Params, beliefs: Beliefs | None = None) -> np.ndarray:
        """Per-graph expected sufficient statistics, shape (G, N_PARAMS)."""
        beliefs = beliefs or self.beliefs(params)
        out = np.zeros((len(self.graphs), N_PARAMS))
        for k, g in enumerate(self.graphs):
            out[k, :N_LOCAL] = beliefs.marginals[k] @ g.features
            if g.n_pair_factors:
                out[k, N_LOCAL:] = beliefs.pair_agree[k] @ g.kinds
        return out

    def decode(self, params: Params) -> list[np.ndarray]:
        """MAP labels from max-sum messages by back-tracking along a BFS tree.

        Ties go to y = 0.  Exact on forests.
        """
        b = self.node_scores(params)
        w = self.K @ params.beta
        N = self.N
        adj = [[] for _ in range(N)]
        for e in range(2 * self.F):
            adj[self.edge_var[e]].append(e)
        y = np.full(N, -1, dtype=int)
        for members in self._comp_members:
            root = int(members.min())
            y[root] = int(b[root, 1] > b[root, 0])
            queue = deque([root])
            while queue:
                v = queue.popleft()
                for e in adj[v]:
                    o = e ^ 1
                    u = self.edge_var[o]
                    if y[u] >= 0:
                        continue
                    # u's score excluding the message it received from this factor
                    cond = b[u] - self.m_fv[o]
                    cond = cond + np.where(np.arange(2) == y[v], w[e // 2], 0.0)
                    y[u] = int(cond[1] > cond[0])
                    queue.append(u)
        vo = self.var_off
        return [y[vo[k]:vo[k + 1]] for k in range(len(self.graphs))]


def sum_product_marginals(graph: FactorGraph, params: Params,
                          config: InferenceConfig = InferenceConfig(), strict=False) -> np.ndarray:
    """Approximate (exact on trees) marginals ``P(y_i = 1)``."""
    bp = BeliefPropagation([graph])
    ok, res, sweeps = bp.run(params, "sum", config, strict)
    bp.store_messages()
    return bp.beliefs(params, ok, res, sweeps).marginals[0]


def max_sum_map(graph: FactorGraph, params: Params,
                config: InferenceConfig = InferenceConfig(), strict=False) -> np.ndarray:
    bp = BeliefPropagation([graph])
    bp.run(params, "max", config, strict)
    return bp.decode(params)[0]


# ------------------------------------------------- likelihood and gradients

def _configs(n):
    return ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1).astype(np.int8)


def enumerate_stats(graph: FactorGraph) -> np.ndarray:
    """Sufficient statistics of every configuration, shape (2^n, N_PARAMS)."""
    n = graph.n_variables
    if n > EXACT_MAX_VARS:
        raise ValueError(f"enumeration limited to {EXACT_MAX_VARS} variables")
    Y = _configs(n)
    local = Y @ graph.features
    if graph.n_pair_factors:
        agree = (Y[:, graph.pairs[:, 0]] == Y[:, graph.pairs[:, 1]]).astype(float)
        corr = agree @ graph.kinds
    else:
        corr = np.zeros((len(Y), N_CORR))
    return np.hstack([local, corr])


def _logsumexp(x, axis=None):
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else float(out.reshape(()))


def log_partition_exact(graph: FactorGraph, params: Params) -> float:
    return _logsumexp(enumerate_stats(graph) @ params.theta)


def log_partition_bethe(graph: FactorGraph, params: Params,
                        config: InferenceConfig = InferenceConfig()) -> float:
    bp = BeliefPropagation([graph])
    bp.run(params, "sum", config)
    return _bethe(bp, params, 0)


def _bethe(bp: BeliefPropagation, params: Params, k: int) -> float:
    g = bp.graphs[k]
    bel = bp.beliefs(params)
    p1 = bel.marginals[k]
    bi = np.stack([1 - p1, p1], axis=1)
    a = g.local_scores(params)
    energy = float(bi[:, 1] @ a)
    ent_nodes = -np.sum(bi * np.log(np.clip(bi, 1e-300, None)), axis=1)
    deg = np.zeros(g.n_variables)
    if g.n_pair_factors:
        np.add.at(deg, g.pairs.ravel(), 1)
        pb = bel.pair_beliefs[k]
        w = g.pair_weights(params)
        energy += float(np.sum((pb[:, 0, 0] + pb[:, 1, 1]) * w))
        ent_pairs = -np.sum(pb * np.log(np.clip(pb, 1e-300, None)))
    else:
        ent_pairs = 0.0
    # H_Bethe = sum_f H(b_f) - sum_i (deg_i - 1) H(b_i)
    entropy = ent_pairs - float(np.sum((deg - 1) * ent_nodes))
    return energy + entropy


def log_partition(graph: FactorGraph, params: Params,
                  config: InferenceConfig = InferenceConfig()) -> tuple[float, bool]:
    """``(log Z, exact)``: enumeration up to 20 variables, Bethe beyond."""
    if graph.n_variables <= EXACT_MAX_VARS:
        return log_partition_exact(graph, params), True
    return log_partition_bethe(graph, params, config), False


def _labels(graph, labels):
    y = graph.labels if labels is None else labels
    if y is None:
        raise UnlabeledVariable(f"question {graph.question_id!r} has no labels")
    y = np.asarray(y, dtype=int)
    if y.shape != (graph.n_variables,) or np.any((y != 0) & (y != 1)):
        raise UnlabeledVariable(f"question {graph.question_id!r}: every variable needs a 0/1 label")
    return y


def log_likelihood(graph: FactorGraph, params: Params, labels=None,
                   config: InferenceConfig = InferenceConfig()) -> float:
    y = _labels(graph, labels)
    log_z, _ = log_partition(graph, params, config)
    return float(params.theta @ sufficient_stats(graph, y) - log_z)


def gradient(graph: FactorGraph, params: Params, labels=None,
             config: InferenceConfig = InferenceConfig()) -> np.ndarray:
    """Observed minus BP-expected sufficient statistics."""
    y = _labels(graph, labels)
    bp = BeliefPropagation([graph])
    bp.run(params, "sum", config)
    return sufficient_stats(graph, y) - bp.expected_stats(params)[0]


# ------------------------------------------------------------------ training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    max_iterations: int = 1000
    grad_tolerance: float = 1e-4
    message_tolerance: float = 1e-8
    max_sweeps: int = 200
    damping: float = 0.5
    l2: float = 0.0
    use_correlations: bool = True
    seed: int = 0
    # "auto": exact expectations for small pools, loopy BP for the rest; "bp": BP everywhere
    expectations: str = "auto"
    # step along the per-question "mean" gradient or the plain "sum"
    reduction: str = "mean"

    def __post_init__(self):
        if self.learning_rate < 0 or self.max_iterations < 0 or self.grad_tolerance <= 0:
            raise ValueError("invalid training configuration")
        if self.expectations not in ("auto", "bp"):
            raise ValueError(f"unknown expectations mode {self.expectations!r}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {self.reduction!r}")


@dataclass
class TrainResult:
    params: Params
    trace: list
    iterations: int
    converged: bool
    grad_norm: float
    exact_likelihood: bool

    def metadata(self, config: TrainConfig) -> dict:
        return {
            "config": asdict(config),
            "iterations": self.iterations,
            "converged": self.converged,
            "grad_norm": self.grad_norm,
            "final_log_likelihood": self.trace[-1] if self.trace else None,
            "exact_likelihood": self.exact_likelihood,
        }


class _SizeGroup:
    """Graphs sharing one variable count, enumerated through shared matrices.

    With ``Y`` the (2^n, n) configurations and ``A`` the (2^n, n(n-1)/2)
    agreement indicators of every variable pair, the logits of graph ``g``
    are ``Y s_g + A w_g`` where ``s_g`` are local scores and ``w_g`` the
    pair weights scattered onto all pairs.
    """

    def __init__(self, graphs: list[FactorGraph]):
        n = graphs[0].n_variables
        Y = _configs(n).astype(float)
        iu, ju = np.triu_indices(n, 1)
        self.n = n
        self.B = np.hstack([Y, (Y[:, iu] == Y[:, ju]).astype(float)])   # [Y | A]
        slot = {(int(i), int(j)): k for k, (i, j) in enumerate(zip(iu, ju))}
        self.X = np.stack([g.features for g in graphs])              # (G, n, N_LOCAL)
        self.K = np.zeros((len(graphs), len(iu), N_CORR))            # (G, pairs, N_CORR)
        for k, g in enumerate(graphs):
            for (i, j), kind in zip(g.pairs.tolist(), g.kinds):
                self.K[k, slot[(i, j)]] = kind

    def terms(self, theta) -> tuple[float, np.ndarray]:
        sw = np.hstack([self.X @ theta[:N_LOCAL], self.K @ theta[N_LOCAL:]])
        logits = sw @ self.B.T
        lz = _logsumexp(logits, axis=1)
        m = np.exp(logits - lz[:, None]) @ self.B   # node marginals | pair agreement
        local = np.einsum("gi,gif->f", m[:, :self.n], self.X)
        corr = np.einsum("gp,gpk->k", m[:, self.n:], self.K)
        return float(lz.sum()), np.concatenate([local, corr])


class _Likelihood:
    """Log-likelihood and expected statistics of labeled graphs.

    Graphs with at most ``CACHE_MAX_VARS`` variables are enumerated exactly
    in batches of equal size.
    """

    CACHE_MAX_VARS = 12

    def __init__(self, graphs: list[FactorGraph], cache: bool = True):
        self.graphs = graphs
        self.obs = np.array([sufficient_stats(g, _labels(g, None)) for g in graphs])
        by_size: dict[int, list[int]] = {}
        if cache:
            for k, g in enumerate(graphs):
                if g.n_variables <= self.CACHE_MAX_VARS:
                    by_size.setdefault(g.n_variables, []).append(k)
        self.groups = [_SizeGroup([graphs[k] for k in ks]) for _, ks in sorted(by_size.items())]
        cached = {k for ks in by_size.values() for k in ks}
        self.rest = [k for k in range(len(graphs)) if k not in cached]
        self.exact = all(graphs[k].n_variables <= EXACT_MAX_VARS for k in self.rest)

    def cached_terms(self, theta) -> tuple[float, np.ndarray]:
        """(sum of log Z, sum of E[Phi]) over the enumerated graphs."""
        log_z = 0.0
        expected = np.zeros(N_PARAMS)
        for group in self.groups:
            lz, e = group.terms(theta)
            log_z += lz
            expected += e
        return log_z, expected

    def rest_log_z(self, params: Params, bp: BeliefPropagation | None = None) -> float:
        """Sum of log Z over uncached graphs; ``bp`` is indexed like ``self.rest``."""
        total = 0.0
        for pos, k in enumerate(self.rest):
            g = self.graphs[k]
            if g.n_variables <= EXACT_MAX_VARS:
                total += log_partition_exact(g, params)
            else:
                total += _bethe(bp, params, pos) if bp is not None else log_partition_bethe(g, params)
        return total

    def __call__(self, params: Params, bp: BeliefPropagation | None = None) -> float:
        theta = params.theta
        return float(self.obs.sum(axis=0) @ theta) - self.cached_terms(theta)[0] \
            - self.rest_log_z(params, bp)


def train(graphs: list[FactorGraph], config: TrainConfig = TrainConfig(),
          init: Params | None = None) -> TrainResult:
    """Gradient ascent on the log-likelihood of labeled question graphs.

    Each step moves ``theta`` by ``learning_rate`` times the gradient
    ``Phi_obs - E[Phi]`` summed over questions, divided by their number when
    ``reduction="mean"``.  Expectations come from exact enumeration
    for small pools (``expectations="auto"``) and from loopy BP otherwise,
    with BP messages warm-started across steps.
    """
    if not graphs:
        raise ValueError("need at least one labeled question graph")
    graphs = sorted(graphs, key=lambda g: g.question_id)
    for g in graphs:
        g.msg_var_to_factor = g.msg_factor_to_var = None
    lik = _Likelihood(graphs, cache=config.expectations == "auto")
    obs = lik.obs.sum(axis=0)
    q = len(graphs) if config.reduction == "mean" else 1
    theta = (init.theta if init is not None else np.zeros(N_PARAMS)).copy()
    if not config.use_correlations:
        theta[N_LOCAL:] = 0.0
    rest = [graphs[k] for k in lik.rest]
    bp = BeliefPropagation(rest) if rest else None
    trace = []
    converged = False
    grad_norm = np.inf
    it = 0
    for it in range(config.max_iterations + 1):
        params = Params.from_theta(theta)
        log_z, expected = lik.cached_terms(theta)
        if bp is not None:
            inf_cfg = InferenceConfig(config.message_tolerance, config.max_sweeps, config.damping,
                                      seed=int(np.random.SeedSequence([config.seed, it]).generate_state(1)[0]))
            bp.run(params, "sum", inf_cfg)
            expected = expected + bp.expected_stats(params).sum(axis=0)
            log_z += lik.rest_log_z(params, bp)
        ll = float(obs @ theta) - log_z - 0.5 * config.l2 * float(theta @ theta)
        if not np.isfinite(ll) or not np.all(np.isfinite(theta)):
            raise Diverged(f"non-finite log-likelihood at iteration {it}; lower the learning rate")
        trace.append(ll)
        grad = (obs - expected) / q - config.l2 * theta
        if not config.use_correlations:
            grad[N_LOCAL:] = 0.0
        grad_norm = float(np.abs(grad).max())
        if grad_norm < config.grad_tolerance:
            converged = True
            break
        if it == config.max_iterations:
            break
        theta = theta + config.learning_rate * grad
    if bp is not None:
        bp.store_messages()
    return TrainResult(Params.from_theta(theta), trace, it, converged, grad_norm, lik.exact)


# ------------------------------------------------------------------- ranking

def rank_candidates(graph: FactorGraph, params: Params,
                    config: InferenceConfig = InferenceConfig(), score: str = "marginal"):
    """Candidates ordered by score, descending, ties by expert id.

    ``score``: ``marginal`` (P(y=1), default), ``max_marginal`` (max-sum
    belief margin) or ``local`` (local potential only).
    """
    if score == "marginal":
        s = sum_product_marginals(graph, params, config)
    elif score == "max_marginal":
        bp = BeliefPropagation([graph])
        bp.run(params, "max", config)
        b = bp.node_scores(params)
        s = b[:, 1] - b[:, 0]
    elif score == "local":
        s = graph.local_scores(params)
    else:
        raise ValueError(f"unknown score {score!r}")
    order = sorted(range(graph.n_variables), key=lambda i: (-s[i], graph.candidates[i]))
    return [(graph.candidates[i], float(s[i])) for i in order]


def rank_many(graphs: list[FactorGraph], params: Params,
              config: InferenceConfig = InferenceConfig()) -> list[list[tuple[str, float]]]:
    """Batched ``rank_candidates`` with marginal scores."""
    if not graphs:
        return []
    bp = BeliefPropagation(graphs)
    ok, res, sweeps = bp.run(params, "sum", config)
    bel = bp.beliefs(params, ok, res, sweeps)
    out = []
    for g, s in zip(graphs, bel.marginals):
        order = sorted(range(g.n_variables), key=lambda i: (-s[i], g.candidates[i]))
        out.append([(g.candidates[i], float(s[i])) for i in order])
    return out


# ---------------------------------------------------------------- model file

def save_model(path, params: Params, metadata: dict | None = None,
               feature_config: dict | None = None) -> None:
    doc = {
        "local_features": list(LOCAL_FEATURES),
        "correlation_features": list(CORRELATION_FEATURES),
        "alpha": params.alpha.tolist(),
        "beta": params.beta.tolist(),
        "feature_config": feature_config or {},
        "training": metadata or {},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> tuple[Params, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc["local_features"] != list(LOCAL_FEATURES) or \
                doc["correlation_features"] != list(CORRELATION_FEATURES):
            raise FormatError(f"{path}: feature names do not match this version")
        return Params(doc["alpha"], doc["beta"]), doc
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{path}: malformed model file ({exc})") from None
