"""Ranking metrics, baselines, repeated-split experiments and decline statistics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .core import RELATION_KINDS, Dataset, RelationIndex, parallel_map, split_dataset
from .errors import NoRelevant, NoResponses
from .features import FeatureContext, PoolStatistics, local_features
from .rankfg import (
    FactorGraph,
    InferenceConfig,
    TrainConfig,
    graph_from_arrays,
    rank_many,
    train,
)

METHODS = ("rankfg", "rankfg-nocorr", "jaccard", "qtoe", "lm", "external")
LEARNING_METHODS = ("rankfg", "rankfg-nocorr")


@dataclass
class RankedResult:
    question_id: str
    expert_ids: list
    labels: list  # 1 = relevant, aligned with expert_ids

    def __post_init__(self):
        if len(self.labels) != len(self.expert_ids):
            raise ValueError("labels must be defined for every ranked expert")


def _labels(result) -> np.ndarray:
    labels = result.labels if isinstance(result, RankedResult) else result
    return (np.asarray(labels) != 0).astype(int)


def precision_at_n(result, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    r = _labels(result)
    return float(r[:n].sum() / n)


def average_precision(result) -> float:
    """Mean of precision@rank over relevant ranks; 0 when nothing is relevant."""
    # accumulated in rank order so the value is reproducible bit for bit
    total, hits = 0.0, 0
    for k, rel in enumerate(_labels(result).tolist(), 1):
        if rel:
            hits += 1
            total += hits / k
    return total / hits if hits else 0.0


def mean_average_precision(results) -> float:
    aps = [average_precision(r) for r in results]
    return sum(aps) / len(aps) if aps else 0.0


def r_prec(result) -> float:
    r = _labels(result)
    R = int(r.sum())
    if R == 0:
        raise NoRelevant("R-precision is undefined without relevant items")
    return float(r[:R].sum() / R)


def metric_names(ns=(3, 5, 10)):
    return [f"P@{n}" for n in ns] + ["MAP", "R-prec"]


def evaluate_rankings(results, ns=(3, 5, 10)) -> dict:
    """Averages over questions; R-prec skips questions without relevant experts."""
    results = list(results)
    out = {f"P@{n}": float(np.mean([precision_at_n(r, n) for r in results])) if results else 0.0
           for n in ns}
    out["MAP"] = mean_average_precision(results)
    rp = [r_prec(r) for r in results if _labels(r).any()]
    out["R-prec"] = float(np.mean(rp)) if rp else 0.0
    return out


# ----------------------------------------------------------------- baselines

def _order(ids, scores, descending):
    sign = -1.0 if descending else 1.0
    return sorted(range(len(ids)), key=lambda i: (sign * scores[i], ids[i]))


def baseline_scores(method: str, pool: PoolStatistics) -> tuple[list, bool]:
    """(scores aligned with ``pool.expert_ids``, descending?)."""
    ids = pool.expert_ids
    if method == "jaccard":
        return [pool.jaccard[e] for e in ids], True
    if method == "qtoe":
        return [pool.qtoe[e] for e in ids], False
    if method == "lm":
        return [pool.lm_raw[e] for e in ids], True
    raise ValueError(f"unknown baseline {method!r}")


def baseline_rank(method: str, question, candidates, context: FeatureContext,
                  relevance: dict | None = None, pool: PoolStatistics | None = None) -> RankedResult:
    """Rank ``candidates`` by Jaccard (desc), QtoE (asc) or LM log-score (desc)."""
    pool = pool or context.pool_statistics(question, candidates)
    scores, desc = baseline_scores(method, pool)
    order = _order(pool.expert_ids, scores, desc)
    ids = [pool.expert_ids[i] for i in order]
    relevance = relevance or {}
    return RankedResult(question.id, ids, [int(relevance.get(e, 0)) for e in ids])


def load_external_scores(path) -> dict:
    """CSV with columns question_id, expert_id, score (e.g. from SVM-Rank)."""
    out: dict[str, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["question_id"], {})[row["expert_id"]] = float(row["score"])
    return out


# --------------------------------------------------------------- experiments

@dataclass
class QuestionData:
    graph: FactorGraph                  # labeled; candidates = experts with a response
    pool: PoolStatistics | None = None  # needed by the baselines only


def build_question_data(ds: Dataset, context: FeatureContext, workers: int = 1) -> list[QuestionData]:
    """Featurize every question that has responses (sorted by question id)."""
    by_q = ds.responses_by_question()
    qids = sorted(by_q)
    items = [(qid, sorted(r.expert_id for r in by_q[qid]),
              {r.expert_id: int(r.label == "agree") for r in by_q[qid]}) for qid in qids]
    return parallel_map(partial(_question_data, context), items, workers)


def _question_data(context: FeatureContext, item) -> QuestionData:
    qid, cands, lab = item
    q = context.dataset.question(qid)
    pool = context.pool_statistics(q, cands)
    feats = np.array([local_features(q, context.dataset.expert(e), pool, 1) for e in cands])
    g = graph_from_arrays(qid, cands, *context.relations.pool_arrays(cands), feats,
                          labels=[lab[e] for e in cands])
    return QuestionData(g, pool)


@dataclass
class ExperimentReport:
    method: str
    metrics: dict                       # mean over repetitions
    repetitions: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    params: list = field(default_factory=list)   # learned theta per repetition

    def to_json(self) -> str:
        return json.dumps({
            "method": self.method,
            "metrics": self.metrics,
            "repetitions": self.repetitions,
            "seeds": self.seeds,
            "params": self.params,
        }, indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        names = list(self.metrics)
        width = max(8, *(len(n) for n in names))
        lines = ["rep".ljust(6) + "".join(n.rjust(width + 2) for n in names)]
        for k, rep in enumerate(self.repetitions):
            lines.append(str(k).ljust(6) + "".join(f"{100 * rep[n]:.1f}".rjust(width + 2) for n in names))
        lines.append("mean".ljust(6) + "".join(f"{100 * self.metrics[n]:.1f}".rjust(width + 2)
                                                for n in names))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.metrics)
        w.writerow(["repetition", "seed", *names])
        for k, (rep, seed) in enumerate(zip(self.repetitions, self.seeds)):
            w.writerow([k, seed, *(repr(rep[n]) for n in names)])
        return buf.getvalue()


def _baseline_order(method, qd: QuestionData, external) -> list[int]:
    g = qd.graph
    if method == "external":
        sc = external.get(g.question_id, {})
        return _order(g.candidates, [sc.get(e, float("-inf")) for e in g.candidates], True)
    if qd.pool is None:
        raise ValueError(f"method {method!r} needs pool statistics")
    scores, desc = baseline_scores(method, qd.pool)
    return _order(qd.pool.expert_ids, scores, desc)


def _run_repetition(task, *, method, data, question_ids, ds, train_ratio, train_config,
                    inf_cfg, ns, external):
    rep, seed = task
    train_ds, test_ds = split_dataset(ds, train_ratio, seed)
    train_ids = {q.id for q in train_ds.questions}
    test_ids = {q.id for q in test_ds.questions}
    by_id = dict(zip(question_ids, data))
    test = [by_id[q] for q in question_ids if q in test_ids]
    theta = None
    if method in LEARNING_METHODS:
        cfg = TrainConfig(**{**train_config.__dict__,
                             "use_correlations": method == "rankfg",
                             "seed": train_config.seed + rep})
        graphs = [by_id[q].graph for q in question_ids if q in train_ids]
        params = train(graphs, cfg).params
        theta = params.theta.tolist()
        ranked = rank_many([qd.graph for qd in test], params, inf_cfg)
        results = []
        for qd, rk in zip(test, ranked):
            lab = dict(zip(qd.graph.candidates, qd.graph.labels.tolist()))
            ids = [e for e, _ in rk]
            results.append(RankedResult(qd.graph.question_id, ids, [lab[e] for e in ids]))
    else:
        results = []
        for qd in test:
            order = _baseline_order(method, qd, external)
            g = qd.graph
            results.append(RankedResult(g.question_id, [g.candidates[i] for i in order],
                                        [int(g.labels[i]) for i in order]))
    return evaluate_rankings(results, ns), theta


def run_experiment(ds: Dataset, method: str, context: FeatureContext | None = None,
                   repetitions: int = 10, train_ratio: float = 0.6, base_seed: int = 0,
                   train_config: TrainConfig = TrainConfig(),
                   inference_config: InferenceConfig = InferenceConfig(),
                   ns=(3, 5, 10), workers: int = 1, data: list[QuestionData] | None = None,
                   external_scores: dict | None = None) -> ExperimentReport:
    """Repeat (split, train if needed, rank test questions, score) ``repetitions`` times.

    Repetition ``r`` uses split seed ``base_seed + r``.  Relevance is the agree
    label, and only experts with a recorded response are ranked.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "external" and external_scores is None:
        raise ValueError("method 'external' needs external_scores")
    if not ds.responses:
        raise NoResponses("dataset has no responses to evaluate against")
    if data is None:
        if context is None:
            raise ValueError("need a FeatureContext or precomputed question data")
        data = build_question_data(ds, context, workers)
    question_ids = [qd.graph.question_id for qd in data]
    # split over the questions that can be evaluated
    qset = set(question_ids)
    eval_ds = Dataset(ds.experts, tuple(q for q in ds.questions if q.id in qset), ds.documents,
                      ds.friendships, ds.responses)
    tasks = [(r, base_seed + r) for r in range(repetitions)]
    fn = partial(_run_repetition, method=method, data=data, question_ids=question_ids, ds=eval_ds,
                 train_ratio=train_ratio, train_config=train_config, inf_cfg=inference_config,
                 ns=ns, external=external_scores)
    outs = parallel_map(fn, tasks, workers)
    reps = [o[0] for o in outs]
    names = metric_names(ns)
    mean = {n: float(np.mean([r[n] for r in reps])) for n in names}
    return ExperimentReport(method, mean, reps, [s for _, s in tasks],
                            [o[1] for o in outs if o[1] is not None])


# ---------------------------------------------------------- decline statistics

def decline_stats(ds: Dataset, min_declines: int = 1) -> dict:
    """Decline rates overall, per venue, and conditioned on correlated declines.

    For each response and relation kind, count the other responders to the
    same question who are related to the expert by that kind and declined.
    ``with`` is the decline rate among responses where that count is at least
    ``min_declines``; ``without`` among responses where it is zero.
    """
    if not ds.responses:
        raise NoResponses("dataset has no responses")
    n = len(ds.responses)
    declines = sum(r.label == "decline" for r in ds.responses)
    venues: dict[str, list[int]] = {}
    for r in ds.responses:
        v = ds.question(r.question_id).venue
        if v is not None:
            venues.setdefault(v, []).append(int(r.label == "decline"))
    rel = RelationIndex(ds)
    cond = {k: {"with": [], "without": [], "by_count": {}} for k in RELATION_KINDS}
    for qid, rs in sorted(ds.responses_by_question().items()):
        for r in rs:
            counts = np.zeros(len(RELATION_KINDS), dtype=int)
            for o in rs:
                if o.expert_id != r.expert_id and o.label == "decline":
                    counts += np.array(rel.kinds(r.expert_id, o.expert_id))
            d = int(r.label == "decline")
            for k, kind in enumerate(RELATION_KINDS):
                c = int(counts[k])
                if c >= min_declines:
                    cond[kind]["with"].append(d)
                elif c == 0:
                    cond[kind]["without"].append(d)
                cond[kind]["by_count"].setdefault(c, []).append(d)

    def rate(xs):
        return float(np.mean(xs)) if xs else None

    return {
        "responses": n,
        "declines": declines,
        "overall_decline_rate": declines / n,
        "per_venue": {v: {"responses": len(xs), "decline_rate": rate(xs)}
                      for v, xs in sorted(venues.items())},
        "conditional": {
            kind: {
                "with": rate(c["with"]), "n_with": len(c["with"]),
                "without": rate(c["without"]), "n_without": len(c["without"]),
                "by_count": {str(k): rate(v) for k, v in sorted(c["by_count"].items())},
            } for kind, c in cond.items()
        },
        "min_declines": min_declines,
    }
