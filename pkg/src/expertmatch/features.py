"""Local and correlation feature functions for the ranking factor graph."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .core import RELATION_KINDS, Dataset, Expert, Question, RelationIndex, normalize_tokens
from .embedding import EmbeddingTable, NbowVector, nbow
from .errors import EmptyText
from .retrieval import CollectionIndex, build_index, score_all
from .transport import qtoe_exact, qtoe_relaxed

LOCAL_FEATURES = (
    "h_index_z",
    "publication_count_z",
    "citation_count_z",
    "career_length_z",
    "qtoe_distance",
    "jaccard",
    "lm_score",
    "academia",
)
CORRELATION_FEATURES = RELATION_KINDS
STAT_FIELDS = ("h_index", "publication_count", "citation_count", "career_length")


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


@dataclass
class CollectionStats:
    """Document frequencies used for tf-idf keyword extraction."""

    n_docs: int
    doc_freq: Counter

    @classmethod
    def from_token_lists(cls, docs):
        df = Counter()
        n = 0
        for toks in docs:
            df.update(set(toks))
            n += 1
        return cls(n, df)

    def idf(self, word) -> float:
        return math.log((1 + self.n_docs) / (1 + self.doc_freq.get(word, 0))) + 1.0


def extract_keywords(text, k: int, stats: CollectionStats, author_keywords=()) -> set[str]:
    """Top-``k`` tf-idf tokens of ``text`` merged with author keywords.

    ``k = 0`` disables extraction and returns the author keywords only.
    """
    tokens = normalize_tokens(text) if isinstance(text, str) else list(text)
    author = {kw.strip().lower() for kw in author_keywords if kw.strip()}
    if not tokens and not author:
        raise EmptyText("no text and no author keywords")
    if k < 0:
        raise ValueError("k must be non-negative")
    tf = Counter(tokens)
    ranked = sorted(tf, key=lambda w: (-tf[w] * stats.idf(w), w))
    return set(ranked[:k]) | author


@dataclass(frozen=True)
class FeatureConfig:
    qtoe_mode: str = "exact"   # or "relaxed"
    use_lm_feature: bool = True
    keyword_k: int = 10

    def __post_init__(self):
        if self.qtoe_mode not in ("exact", "relaxed"):
            raise ValueError(f"unknown qtoe_mode {self.qtoe_mode!r}")


@dataclass
class PoolStatistics:
    """Per-question quantities shared by every candidate in the pool."""

    expert_ids: list[str]
    stat_mean: np.ndarray
    stat_std: np.ndarray
    qtoe: dict
    jaccard: dict
    lm_score: dict  # min-max normalized within the pool
    lm_raw: dict    # query log-likelihood


def zscore(value, mean, std):
    return 0.0 if std == 0 else (value - mean) / std


class FeatureContext:
    """Everything needed to featurize (question, candidate pool) pairs for one dataset."""

    def __init__(self, ds: Dataset, embeddings: EmbeddingTable,
                 config: FeatureConfig = FeatureConfig(), index: CollectionIndex | None = None):
        self.dataset = ds
        self.embeddings = embeddings
        self.config = config
        self.index = index if index is not None else build_index(ds)
        self.relations = RelationIndex(ds)
        self.stats = CollectionStats.from_token_lists(d.tokens for d in ds.documents)
        self._nbow: dict[str, NbowVector] = {}
        self._interests: dict[str, set] = {}

    def expert_nbow(self, expert_id) -> NbowVector:
        if expert_id not in self._nbow:
            self._nbow[expert_id] = nbow(self.dataset.expert_tokens(expert_id), self.embeddings)
        return self._nbow[expert_id]

    def interests(self, expert: Expert) -> set:
        if expert.id not in self._interests:
            if expert.interest_keywords:
                kws = {k.strip().lower() for k in expert.interest_keywords}
            else:
                kws = extract_keywords(self.dataset.expert_tokens(expert.id),
                                       self.config.keyword_k, self.stats)
            self._interests[expert.id] = kws
        return self._interests[expert.id]

    def question_keywords(self, q: Question) -> set:
        return extract_keywords(q.text, self.config.keyword_k, self.stats, q.author_keywords)

    def qtoe(self, d_q: NbowVector, expert_id) -> float:
        d_v = self.expert_nbow(expert_id)
        if self.config.qtoe_mode == "exact":
            return qtoe_exact(d_q, d_v, self.embeddings)[0]
        return qtoe_relaxed(d_q, d_v, self.embeddings)

    def pool_statistics(self, q: Question, expert_ids) -> PoolStatistics:
        ids = list(expert_ids)
        experts = [self.dataset.expert(e) for e in ids]
        stats = np.array([[getattr(e, f) for f in STAT_FIELDS] for e in experts], dtype=float)
        d_q = nbow(q.tokens, self.embeddings)
        kw = self.question_keywords(q)
        raw = score_all(self.index, q)[[self.index.position[e] for e in ids]]
        lo, hi = raw.min(), raw.max()
        if self.config.use_lm_feature and hi > lo:
            lm = (raw - lo) / (hi - lo)
        else:
            lm = np.zeros(len(ids))
        return PoolStatistics(
            ids,
            stats.mean(axis=0),
            stats.std(axis=0),
            {e: self.qtoe(d_q, e) for e in ids},
            {ex.id: jaccard(kw, self.interests(ex)) for ex in experts},
            dict(zip(ids, lm.tolist())),
            dict(zip(ids, raw.tolist())),
        )

    def pool_features(self, q: Question, expert_ids) -> np.ndarray:
        """(n, 8) matrix of raw local features (the y=1 encoding) for a pool."""
        pool = self.pool_statistics(q, expert_ids)
        return np.array([local_features(q, self.dataset.expert(e), pool, 1) for e in expert_ids])


def local_features(question: Question, expert: Expert, pool: PoolStatistics, y: int) -> np.ndarray:
    if y == 0:
        return np.zeros(len(LOCAL_FEATURES))
    stats = [zscore(getattr(expert, f), pool.stat_mean[k], pool.stat_std[k])
             for k, f in enumerate(STAT_FIELDS)]
    return np.array(stats + [
        pool.qtoe[expert.id],
        pool.jaccard[expert.id],
        pool.lm_score[expert.id],
        1.0 if expert.organization == "academia" else 0.0,
    ])


def correlation_features(edge_kinds, y_i: int, y_j: int) -> np.ndarray:
    """Binary vector over relation kinds; fires only when the labels agree."""
    if y_i != y_j:
        return np.zeros(len(CORRELATION_FEATURES))
    kinds = set(edge_kinds)
    return np.array([1.0 if k in kinds else 0.0 for k in CORRELATION_FEATURES])


def write_feature_csv(path, rows) -> None:
    """``rows``: iterable of (question_id, expert_id, y, feature vector)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["question_id", "expert_id", "y", *LOCAL_FEATURES])
        for qid, eid, y, vec in rows:
            w.writerow([qid, eid, y, *(repr(float(x)) for x in vec)])
