"""Data model, JSONL ingestion, tokenization, relation derivation and splitting."""

from __future__ import annotations

import itertools
import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    DanglingReference,
    DuplicateId,
    EmptyDataset,
    InvalidRatio,
    ParseError,
    TooFewQuestions,
    UnknownId,
)

ORGANIZATIONS = ("academia", "industry", "unknown")
RELATION_KINDS = ("same_nationality", "same_affiliation", "friendship")
LABELS = ("agree", "decline")
# raw response labels accepted on input; everything but "agree" is a decline
_INPUT_LABELS = {
    "agree": "agree",
    "decline": "decline",
    "unavailable": "decline",
    "no_response": "decline",
}

_TOKEN_RE = re.compile(r"[^\W_]+")


def normalize_tokens(text: str) -> list[str]:
    """Lowercase ``text`` and split it into runs of Unicode letters/digits.

    >>> normalize_tokens("Deep Learning, for NLP!")
    ['deep', 'learning', 'for', 'nlp']
    """
    return _TOKEN_RE.findall(text.lower())


def _norm_attr(value):
    if value is None:
        return None
    value = value.strip().lower()
    return value or None


@dataclass(frozen=True)
class Expert:
    id: str
    name: str = ""
    nationality: str | None = None
    affiliation: str | None = None
    organization: str = "unknown"
    h_index: int = 0
    publication_count: int = 0
    citation_count: int = 0
    career_length: int = 0
    interest_keywords: frozenset = frozenset()
    document_ids: tuple = ()


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    author_keywords: frozenset = frozenset()
    venue: str | None = None
    tokens: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(normalize_tokens(self.text)))


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    tokens: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(normalize_tokens(self.text)))


@dataclass(frozen=True, order=True)
class RelationEdge:
    expert_a: str
    expert_b: str
    kind: str

    @classmethod
    def make(cls, a, b, kind):
        if a == b:
            raise ValueError(f"self-relation on {a!r}")
        if kind not in RELATION_KINDS:
            raise ValueError(f"unknown relation kind {kind!r}")
        a, b = sorted((a, b))
        return cls(a, b, kind)


@dataclass(frozen=True)
class ResponseRecord:
    question_id: str
    expert_id: str
    label: str


@dataclass(frozen=True)
class Dataset:
    experts: tuple = ()
    questions: tuple = ()
    documents: tuple = ()
    friendships: tuple = ()  # canonical (a, b) pairs with a < b
    responses: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "_expert_map", {e.id: e for e in self.experts})
        object.__setattr__(self, "_question_map", {q.id: q for q in self.questions})
        object.__setattr__(self, "_document_map", {d.id: d for d in self.documents})

    def expert(self, expert_id) -> Expert:
        try:
            return self._expert_map[expert_id]
        except KeyError:
            raise UnknownId(f"unknown expert id {expert_id!r}") from None

    def question(self, question_id) -> Question:
        try:
            return self._question_map[question_id]
        except KeyError:
            raise UnknownId(f"unknown question id {question_id!r}") from None

    def document(self, doc_id) -> Document:
        try:
            return self._document_map[doc_id]
        except KeyError:
            raise UnknownId(f"unknown document id {doc_id!r}") from None

    def has_expert(self, expert_id) -> bool:
        return expert_id in self._expert_map

    def expert_tokens(self, expert_id) -> list[str]:
        """Pseudo-document of an expert: all of their documents concatenated."""
        tokens = []
        for doc_id in self.expert(expert_id).document_ids:
            tokens.extend(self._document_map[doc_id].tokens)
        return tokens

    def responses_by_question(self) -> dict[str, list[ResponseRecord]]:
        out: dict[str, list[ResponseRecord]] = {}
        for r in self.responses:
            out.setdefault(r.question_id, []).append(r)
        return out

    def counts(self) -> dict:
        return {
            "experts": len(self.experts),
            "questions": len(self.questions),
            "documents": len(self.documents),
            "friendships": len(self.friendships),
            "responses": len(self.responses),
        }


# ---------------------------------------------------------------- ingestion

def _read_jsonl(path: Path):
    if not path.exists():
        return
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(path, line_no, "expected a JSON object")
            yield line_no, obj


def _field(obj, key, path, line_no, kind=str, required=True, default=None):
    if key not in obj or obj[key] is None:
        if required:
            raise ParseError(path, line_no, f"missing field {key!r}")
        return default
    value = obj[key]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise ParseError(path, line_no, f"field {key!r} must be a non-negative integer")
    elif kind is list:
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ParseError(path, line_no, f"field {key!r} must be an array of strings")
    elif not isinstance(value, kind):
        raise ParseError(path, line_no, f"field {key!r} has wrong type")
    return value


def load_dataset(path) -> Dataset:
    """Load a dataset directory of JSONL files.

    ``experts.jsonl`` and ``documents.jsonl`` are required; ``questions.jsonl``,
    ``edges.jsonl`` and ``responses.jsonl`` may be absent.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")

    documents = []
    p = root / "documents.jsonl"
    for ln, obj in _read_jsonl(p):
        documents.append(Document(_field(obj, "id", p, ln), _field(obj, "text", p, ln)))

    experts = []
    p = root / "experts.jsonl"
    for ln, obj in _read_jsonl(p):
        org = _field(obj, "organization", p, ln, required=False, default="unknown")
        if org not in ORGANIZATIONS:
            raise ParseError(p, ln, f"unknown organization {org!r}")
        experts.append(Expert(
            id=_field(obj, "id", p, ln),
            name=_field(obj, "name", p, ln, required=False, default=""),
            nationality=_field(obj, "nationality", p, ln, required=False),
            affiliation=_field(obj, "affiliation", p, ln, required=False),
            organization=org,
            h_index=_field(obj, "h_index", p, ln, int, False, 0),
            publication_count=_field(obj, "publication_count", p, ln, int, False, 0),
            citation_count=_field(obj, "citation_count", p, ln, int, False, 0),
            career_length=_field(obj, "career_length", p, ln, int, False, 0),
            interest_keywords=frozenset(_field(obj, "interest_keywords", p, ln, list, False, [])),
            document_ids=tuple(_field(obj, "document_ids", p, ln, list, False, [])),
        ))

    questions = []
    p = root / "questions.jsonl"
    for ln, obj in _read_jsonl(p):
        questions.append(Question(
            id=_field(obj, "id", p, ln),
            text=_field(obj, "text", p, ln),
            author_keywords=frozenset(_field(obj, "author_keywords", p, ln, list, False, [])),
            venue=_field(obj, "venue", p, ln, required=False),
        ))

    friendships = set()
    p = root / "edges.jsonl"
    for ln, obj in _read_jsonl(p):
        kind = _field(obj, "kind", p, ln)
        if kind != "friendship":
            raise ParseError(p, ln, f"only friendship edges may be given explicitly, got {kind!r}")
        a, b = _field(obj, "a", p, ln), _field(obj, "b", p, ln)
        if a == b:
            raise ParseError(p, ln, "self-loop edge")
        friendships.add(tuple(sorted((a, b))))

    responses = []
    p = root / "responses.jsonl"
    for ln, obj in _read_jsonl(p):
        label = _field(obj, "label", p, ln)
        if label not in _INPUT_LABELS:
            raise ParseError(p, ln, f"unknown label {label!r}")
        responses.append(ResponseRecord(
            _field(obj, "question_id", p, ln), _field(obj, "expert_id", p, ln), _INPUT_LABELS[label]
        ))

    ds = Dataset(tuple(experts), tuple(questions), tuple(documents),
                 tuple(sorted(friendships)), tuple(responses))
    validate(ds)
    return ds


def _check_unique(ids: Iterable[str], what: str):
    seen = set()
    for i in ids:
        if i in seen:
            raise DuplicateId(f"duplicate {what} id {i!r}")
        seen.add(i)


def validate(ds: Dataset) -> None:
    """Check uniqueness and referential integrity; raise on the first violation."""
    if not ds.experts or not ds.documents:
        raise EmptyDataset("dataset needs at least one expert and one document")
    _check_unique((e.id for e in ds.experts), "expert")
    _check_unique((q.id for q in ds.questions), "question")
    _check_unique((d.id for d in ds.documents), "document")
    docs = {d.id for d in ds.documents}
    experts = {e.id for e in ds.experts}
    questions = {q.id for q in ds.questions}
    for e in ds.experts:
        for d in e.document_ids:
            if d not in docs:
                raise DanglingReference(f"expert {e.id!r} references unknown document {d!r}")
    for a, b in ds.friendships:
        for x in (a, b):
            if x not in experts:
                raise DanglingReference(f"edge references unknown expert {x!r}")
    seen = set()
    for r in ds.responses:
        if r.question_id not in questions:
            raise DanglingReference(f"response references unknown question {r.question_id!r}")
        if r.expert_id not in experts:
            raise DanglingReference(f"response references unknown expert {r.expert_id!r}")
        key = (r.question_id, r.expert_id)
        if key in seen:
            raise DuplicateId(f"duplicate response for {key}")
        seen.add(key)


def save_dataset(ds: Dataset, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    def dump(name, rows):
        with open(root / name, "w", encoding="utf-8", newline="\n") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")

    dump("experts.jsonl", ({
        "id": e.id, "name": e.name, "nationality": e.nationality,
        "affiliation": e.affiliation, "organization": e.organization,
        "h_index": e.h_index, "publication_count": e.publication_count,
        "citation_count": e.citation_count, "career_length": e.career_length,
        "interest_keywords": sorted(e.interest_keywords),
        "document_ids": list(e.document_ids),
    } for e in ds.experts))
    dump("questions.jsonl", ({
        "id": q.id, "text": q.text, "author_keywords": sorted(q.author_keywords),
        **({"venue": q.venue} if q.venue is not None else {}),
    } for q in ds.questions))
    dump("documents.jsonl", ({"id": d.id, "text": d.text} for d in ds.documents))
    dump("edges.jsonl", ({"a": a, "b": b, "kind": "friendship"} for a, b in ds.friendships))
    dump("responses.jsonl", ({"question_id": r.question_id, "expert_id": r.expert_id,
                              "label": r.label} for r in ds.responses))


# ---------------------------------------------------------------- relations

class RelationIndex:
    """Fast lookup of relation kinds between experts.

    Nationality and affiliation are compared after trimming and lowercasing;
    missing values never match.
    """

    def __init__(self, ds: Dataset):
        self.nationality = {e.id: _norm_attr(e.nationality) for e in ds.experts}
        self.affiliation = {e.id: _norm_attr(e.affiliation) for e in ds.experts}
        self.friends: dict[str, set] = {}
        for a, b in ds.friendships:
            self.friends.setdefault(a, set()).add(b)
            self.friends.setdefault(b, set()).add(a)

    def kinds(self, a, b) -> tuple[int, int, int]:
        na, nb = self.nationality[a], self.nationality[b]
        fa, fb = self.affiliation[a], self.affiliation[b]
        return (
            int(na is not None and na == nb),
            int(fa is not None and fa == fb),
            int(b in self.friends.get(a, ())),
        )

    def among(self, expert_ids) -> list[RelationEdge]:
        """All relation edges whose endpoints are both in ``expert_ids``."""
        ids = sorted(set(expert_ids))
        members = set(ids)
        edges = []
        for attr, kind in ((self.nationality, "same_nationality"),
                           (self.affiliation, "same_affiliation")):
            groups: dict[str, list[str]] = {}
            for i in ids:
                if attr[i] is not None:
                    groups.setdefault(attr[i], []).append(i)
            for group in groups.values():
                for a, b in itertools.combinations(group, 2):
                    edges.append(RelationEdge(a, b, kind))
        for a in ids:
            for b in self.friends.get(a, ()):
                if a < b and b in members:
                    edges.append(RelationEdge(a, b, "friendship"))
        return sorted(set(edges))


    def pool_arrays(self, expert_ids) -> tuple[np.ndarray, np.ndarray]:
        """Related pairs among ``expert_ids`` as position arrays.

        Returns ``(pairs, kinds)``: ``pairs`` is (F, 2) with ``i < j`` indexing
        ``expert_ids`` in lexicographic order, ``kinds`` the (F, 3) 0/1
        indicators over ``RELATION_KINDS``.  Equivalent to :meth:`among`.
        """
        ids = list(expert_ids)
        n = len(ids)
        keys, kinds = [], []
        for k, attr in enumerate((self.nationality, self.affiliation)):
            values = [attr[i] for i in ids]
            present = np.array([v is not None for v in values], dtype=bool)
            if not present.any():
                continue
            pos = np.flatnonzero(present)
            _, codes = np.unique([values[i] for i in pos], return_inverse=True)
            order = np.argsort(codes, kind="stable")
            bounds = np.flatnonzero(np.diff(codes[order])) + 1
            for group in np.split(pos[order], bounds):
                if len(group) < 2:
                    continue
                a, b = np.triu_indices(len(group), 1)
                lo = np.minimum(group[a], group[b])
                hi = np.maximum(group[a], group[b])
                keys.append(lo * n + hi)
                kinds.append(np.full(len(lo), 1 << k))
        at = {e: i for i, e in enumerate(ids)}
        fr = [(min(at[a], at[b]), max(at[a], at[b])) for a in ids for b in self.friends.get(a, ())
              if b in at and a < b]
        if fr:
            f = np.array(fr, dtype=np.int64)
            keys.append(f[:, 0] * n + f[:, 1])
            kinds.append(np.full(len(f), 4))
        if not keys:
            return np.zeros((0, 2), dtype=np.intp), np.zeros((0, len(RELATION_KINDS)))
        keys = np.concatenate(keys).astype(np.int64)
        bits = np.concatenate(kinds)
        uniq, inv = np.unique(keys, return_inverse=True)
        merged = np.zeros(len(uniq), dtype=np.int64)
        np.bitwise_or.at(merged, inv, bits)
        pairs = np.stack([uniq // n, uniq % n], axis=1).astype(np.intp)
        flags = ((merged[:, None] >> np.arange(len(RELATION_KINDS))) & 1).astype(float)
        return pairs, flags


def derive_relations(ds: Dataset) -> list[RelationEdge]:
    return RelationIndex(ds).among(e.id for e in ds.experts)


# ---------------------------------------------------------------- splitting

def split_dataset(ds: Dataset, train_ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Question-level random split; responses travel with their question."""
    if not (0.0 < train_ratio < 1.0):
        raise InvalidRatio(f"train_ratio must be in (0, 1), got {train_ratio}")
    n = len(ds.questions)
    if n < 2:
        raise TooFewQuestions(f"need at least 2 questions to split, got {n}")
    n_train = int(math.floor(train_ratio * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    ids = sorted(q.id for q in ds.questions)
    perm = np.random.default_rng(seed).permutation(n)
    train_ids = {ids[i] for i in perm[:n_train]}

    def part(keep):
        qs = tuple(q for q in ds.questions if keep(q.id))
        rs = tuple(r for r in ds.responses if keep(r.question_id))
        return Dataset(ds.experts, qs, ds.documents, ds.friendships, rs)

    return part(lambda q: q in train_ids), part(lambda q: q not in train_ids)


def parallel_map(fn, items, workers: int = 1):
    """Order-preserving map; ``workers > 1`` fans out over processes."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
