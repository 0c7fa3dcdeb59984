"""Candidate generation with a Dirichlet-smoothed query-likelihood model.

Each expert is one pseudo-document (the concatenation of their documents).
The smoothed word probability is

    P(w|d) = N_d/(N_d+lam) * N_wd/N_d + (1 - N_d/(N_d+lam)) * N_wD/N_D

and a question scores ``sum_w log P(w|d)`` over its tokens.
"""

from __future__ import annotations

import math
import pickle
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .core import Dataset, Question
from .errors import EmptyDocumentSet, EmptyQuery, FormatError

FLOOR = 1e-10
DEFAULT_K = 200


@dataclass
class CollectionIndex:
    expert_ids: list[str]
    doc_counts: list[Counter]          # N^w_d per expert
    doc_lengths: np.ndarray            # N_d
    collection_counts: Counter         # N^w_D
    collection_length: int             # N_D
    lam: float
    postings: dict                     # word -> (expert positions, counts)

    def __post_init__(self):
        self.position = {e: i for i, e in enumerate(self.expert_ids)}

    @property
    def vocabulary(self):
        return self.collection_counts.keys()

    def save(self, path):
        with open(path, "wb") as fh:
            pickle.dump(self, fh, protocol=pickle.HIGHEST_PROTOCOL)

    @staticmethod
    def load(path) -> "CollectionIndex":
        with open(path, "rb") as fh:
            obj = pickle.load(fh)
        if not isinstance(obj, CollectionIndex):
            raise FormatError(f"{path} is not an index cache")
        return obj


@dataclass
class CandidateList:
    question_id: str
    entries: list[tuple[str, float]]

    @property
    def expert_ids(self):
        return [e for e, _ in self.entries]


def index_from_tokens(docs: dict[str, list[str]], lam: float | None = None) -> CollectionIndex:
    """Build an index from ``expert id -> tokens``; ``lam`` defaults to mean length."""
    ids = list(docs)
    counts, lengths = [], []
    coll = Counter()
    postings: dict[str, tuple[list, list]] = {}
    for pos, eid in enumerate(ids):
        toks = docs[eid]
        if not toks:
            raise EmptyDocumentSet(f"expert {eid!r} has no document tokens")
        c = Counter(toks)
        counts.append(c)
        lengths.append(len(toks))
        coll.update(c)
        for w, n in c.items():
            p = postings.setdefault(w, ([], []))
            p[0].append(pos)
            p[1].append(n)
    lengths = np.asarray(lengths, dtype=float)
    if lam is None:
        lam = float(lengths.mean())
    if lam < 0:
        raise ValueError("smoothing lambda must be non-negative")
    postings = {w: (np.asarray(p, dtype=np.intp), np.asarray(n, dtype=float))
                for w, (p, n) in postings.items()}
    return CollectionIndex(ids, counts, lengths, coll, int(lengths.sum()), float(lam), postings)


def build_index(ds: Dataset, lam: float | None = None) -> CollectionIndex:
    return index_from_tokens({e.id: ds.expert_tokens(e.id) for e in ds.experts}, lam)


def lm_word_prob(index: CollectionIndex, word: str, expert_id: str) -> float:
    n_wD = index.collection_counts.get(word, 0)
    if n_wD == 0:
        return FLOOR
    pos = index.position[expert_id]
    n_d = index.doc_lengths[pos]
    n_wd = index.doc_counts[pos].get(word, 0)
    mix = n_d / (n_d + index.lam)
    return mix * (n_wd / n_d) + (1.0 - mix) * (n_wD / index.collection_length)


def _query_tokens(question) -> list[str]:
    tokens = list(question.tokens) if isinstance(question, Question) else list(question)
    if not tokens:
        raise EmptyQuery("question has no tokens")
    return tokens


def lm_query_logprob(index: CollectionIndex, question, expert_id: str) -> float:
    """Log query likelihood; ``question`` is a Question or a token list."""
    total = 0.0
    for w in _query_tokens(question):
        total += math.log(max(lm_word_prob(index, w, expert_id), FLOOR))
    return total


def score_all(index: CollectionIndex, question) -> np.ndarray:
    """Vectorised ``lm_query_logprob`` for every expert, in index order."""
    tokens = _query_tokens(question)
    n_d = index.doc_lengths
    denom = n_d + index.lam
    scores = np.zeros(len(index.expert_ids))
    for w, qn in Counter(tokens).items():
        n_wD = index.collection_counts.get(w, 0)
        if n_wD == 0:
            scores += qn * math.log(FLOOR)
            continue
        p_coll = n_wD / index.collection_length
        n_wd = np.zeros(len(n_d))
        pos, cnt = index.postings[w]
        n_wd[pos] = cnt
        with np.errstate(divide="ignore", invalid="ignore"):
            # N_d/(N_d+lam) * N_wd/N_d == N_wd/(N_d+lam)
            p = n_wd / denom + (index.lam / denom) * p_coll
        scores += qn * np.log(np.maximum(p, FLOOR))
    return scores


def rank_by_score(ids, scores, descending=True):
    """Sort ``ids`` by score with ascending-id tie-break."""
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    key = -np.asarray(scores, dtype=float) if descending else np.asarray(scores, dtype=float)
    order = sorted(order, key=lambda i: key[i])  # stable: keeps id order on ties
    return order


def generate_candidates(index: CollectionIndex, question, k: int = DEFAULT_K,
                        question_id: str | None = None) -> CandidateList:
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = score_all(index, question)
    order = rank_by_score(index.expert_ids, scores)[:k]
    qid = question_id if question_id is not None else getattr(question, "id", "")
    return CandidateList(qid, [(index.expert_ids[i], float(scores[i])) for i in order])
