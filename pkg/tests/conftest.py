import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

TOY_EXPERTS = [
    {"id": "e1", "name": "Ada", "nationality": "US", "affiliation": "MIT", "organization": "academia",
     "h_index": 20, "publication_count": 80, "citation_count": 3000, "career_length": 15,
     "interest_keywords": ["graph", "learning"], "document_ids": ["d1"]},
    {"id": "e2", "name": "Bo", "nationality": " us ", "affiliation": "CMU", "organization": "industry",
     "h_index": 5, "publication_count": 12, "citation_count": 90, "career_length": 4,
     "interest_keywords": ["parsing"], "document_ids": ["d2"]},
    {"id": "e3", "name": "Cy", "nationality": None, "affiliation": "mit", "organization": "academia",
     "h_index": 11, "publication_count": 40, "citation_count": 700, "career_length": 9,
     "interest_keywords": [], "document_ids": ["d3", "d4"]},
]
TOY_DOCUMENTS = [
    {"id": "d1", "text": "graph neural networks for graph learning"},
    {"id": "d2", "text": "statistical parsing of natural language"},
    {"id": "d3", "text": "transport distances between documents"},
    {"id": "d4", "text": "graph matching and transport"},
]
TOY_QUESTIONS = [
    {"id": "q1", "text": "Learning on graph data", "author_keywords": ["graph"], "venue": "J1"},
    {"id": "q2", "text": "Parsing natural language", "author_keywords": [], "venue": "J2"},
]
TOY_EDGES = [{"a": "e1", "b": "e3", "kind": "friendship"}, {"a": "e3", "b": "e1", "kind": "friendship"}]
TOY_RESPONSES = [
    {"question_id": "q1", "expert_id": "e1", "label": "agree"},
    {"question_id": "q1", "expert_id": "e2", "label": "no_response"},
    {"question_id": "q1", "expert_id": "e3", "label": "decline"},
    {"question_id": "q2", "expert_id": "e2", "label": "agree"},
    {"question_id": "q2", "expert_id": "e3", "label": "unavailable"},
]


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")


def write_toy(root: Path, vectors=True):
    root.mkdir(parents=True, exist_ok=True)
    write_jsonl(root / "experts.jsonl", TOY_EXPERTS)
    write_jsonl(root / "documents.jsonl", TOY_DOCUMENTS)
    write_jsonl(root / "questions.jsonl", TOY_QUESTIONS)
    write_jsonl(root / "edges.jsonl", TOY_EDGES)
    write_jsonl(root / "responses.jsonl", TOY_RESPONSES)
    if vectors:
        from expertmatch.core import load_dataset
        from expertmatch.embedding import EmbeddingTable, save_vectors
        ds = load_dataset(root)
        words = sorted({t for d in ds.documents for t in d.tokens} | {t for q in ds.questions for t in q.tokens})
        rng = np.random.default_rng(0)
        save_vectors(EmbeddingTable(words, rng.normal(size=(len(words), 4))), root / "vectors.txt")
    return root


@pytest.fixture
def toy_dir(tmp_path):
    return write_toy(tmp_path / "toy")


@pytest.fixture
def toy(toy_dir):
    from expertmatch.core import load_dataset
    return load_dataset(toy_dir)


# criterion number -> (passed, detail); filled by the acceptance suite
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
