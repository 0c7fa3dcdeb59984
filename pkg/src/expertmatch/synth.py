"""Synthetic expert networks with labels drawn exactly from a planted model.

Documents are bags of topic words; word vectors are noisy copies of topic
centres, so transport distances and keyword overlap carry real signal.
Labels for each question are sampled by inverse CDF over all ``2^n``
configurations of its candidate pool, which is why pools are capped at 15.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import Dataset, Document, Expert, Question, ResponseRecord, save_dataset
from .embedding import EmbeddingTable, save_vectors
from .errors import TooManyCandidates
from .features import FeatureConfig, FeatureContext
from .rankfg import FactorGraph, Params, enumerate_stats, graph_from_arrays

MAX_POOL = 15


@dataclass(frozen=True)
class SynthConfig:
    n_questions: int = 200
    candidates_per_question: int = 10
    n_experts: int = 300
    alpha: tuple = (0.8, -0.6, 0.5, -0.7, -1.5, 4.0, 1.5, 0.8)
    beta: tuple = (1.0, 0.8, 1.2)
    # probability that two experts share the relation
    density_nationality: float = 0.15
    density_affiliation: float = 0.05
    density_friendship: float = 0.05
    feature_noise: float = 0.6       # sigma of the log-normal statistics
    n_topics: int = 8
    words_per_topic: int = 12
    n_general_words: int = 40
    embedding_dim: int = 16
    topic_spread: float = 0.28       # sd of topic centres
    word_spread: float = 0.15        # sd of words around their centre
    on_topic_share: float = 0.5      # pool share drawn from on-topic experts
    qtoe_mode: str = "exact"
    keyword_k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.candidates_per_question > MAX_POOL:
            raise TooManyCandidates(
                f"exact sampling needs <= {MAX_POOL} candidates per question, "
                f"got {self.candidates_per_question}")
        if self.candidates_per_question < 1 or self.candidates_per_question > self.n_experts:
            raise ValueError("candidates_per_question must be in [1, n_experts]")
        for d in (self.density_nationality, self.density_affiliation, self.density_friendship):
            if not 0.0 <= d <= 1.0:
                raise ValueError("densities must lie in [0, 1]")
        if len(self.alpha) != 8 or len(self.beta) != 3:
            raise ValueError("alpha needs 8 entries and beta 3")

    @classmethod
    def from_dict(cls, d: dict):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for k in ("alpha", "beta"):
            if k in known:
                known[k] = tuple(known[k])
        return cls(**known)

    @property
    def planted(self) -> Params:
        return Params(self.alpha, self.beta)

    @property
    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(qtoe_mode=self.qtoe_mode, keyword_k=self.keyword_k)


@dataclass
class SynthData:
    dataset: Dataset
    embeddings: EmbeddingTable
    config: SynthConfig
    graphs: list = field(default_factory=list)   # labeled factor graphs per question

    @property
    def planted(self) -> Params:
        return self.config.planted

    def metadata(self) -> dict:
        return {
            "planted": {"alpha": list(self.config.alpha), "beta": list(self.config.beta)},
            "config": asdict(self.config),
            "statistics_distribution": "log-normal, rounded to integers",
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        save_dataset(self.dataset, out)
        save_vectors(self.embeddings, out / "vectors.txt")
        (out / "planted.json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")


def _categories(density, rng, n):
    """Attribute values such that two experts match with probability ~density."""
    if density <= 0:
        return [None] * n
    k = max(1, int(round(1.0 / density)))
    return [f"c{v}" for v in rng.integers(k, size=n)]


def sample_configurations(graph: FactorGraph, params: Params, size: int, rng) -> np.ndarray:
    """Exact joint samples of ``Y``, shape (size, n)."""
    n = graph.n_variables
    if n > MAX_POOL:
        raise TooManyCandidates(f"pool of {n} exceeds {MAX_POOL}")
    logits = enumerate_stats(graph) @ params.theta
    p = np.exp(logits - logits.max())
    cdf = np.cumsum(p / p.sum())
    idx = np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), len(cdf) - 1)
    return ((idx[:, None] >> np.arange(n)[None, :]) & 1).astype(int)


def synth_generate(config: SynthConfig = SynthConfig()) -> SynthData:
    rng = np.random.default_rng(config.seed)
    T, m = config.n_topics, config.embedding_dim

    # vocabulary and embeddings
    topic_words = [[f"t{t}w{k}" for k in range(config.words_per_topic)] for t in range(T)]
    general = [f"g{k}" for k in range(config.n_general_words)]
    centres = rng.normal(scale=config.topic_spread, size=(T, m))
    words, vecs = [], []
    for t in range(T):
        for w in topic_words[t]:
            words.append(w)
            vecs.append(centres[t] + rng.normal(scale=config.word_spread, size=m))
    for w in general:
        words.append(w)
        vecs.append(rng.normal(scale=config.topic_spread, size=m))
    embeddings = EmbeddingTable(words, np.array(vecs))

    def bag(mix, length):
        topics = rng.choice(T, size=length, p=mix)
        out = []
        for t in topics:
            if rng.random() < 0.85:
                out.append(topic_words[t][rng.integers(config.words_per_topic)])
            else:
                out.append(general[rng.integers(len(general))])
        return out

    nats = _categories(config.density_nationality, rng, config.n_experts)
    affs = _categories(config.density_affiliation, rng, config.n_experts)
    s = config.feature_noise
    experts, documents = [], []
    main_topic = np.zeros(config.n_experts, dtype=int)
    for e in range(config.n_experts):
        mix = rng.dirichlet(np.full(T, 0.3))
        doc_ids = []
        for d in range(int(rng.integers(1, 4))):
            did = f"d{e}_{d}"
            documents.append(Document(did, " ".join(bag(mix, int(rng.integers(20, 50))))))
            doc_ids.append(did)
        main = int(np.argmax(mix))
        main_topic[e] = main
        interests = frozenset(rng.choice(topic_words[main], size=5, replace=False).tolist())
        experts.append(Expert(
            id=f"e{e:04d}",
            name=f"Expert {e}",
            nationality=nats[e],
            affiliation=affs[e],
            organization="academia" if rng.random() < 0.7 else "industry",
            h_index=int(round(rng.lognormal(2.5, s))),
            publication_count=int(round(rng.lognormal(3.5, s))),
            citation_count=int(round(rng.lognormal(6.0, s))),
            career_length=int(round(rng.lognormal(2.5, s))),
            interest_keywords=interests,
            document_ids=tuple(doc_ids),
        ))

    friendships = set()
    n_e = config.n_experts
    if config.density_friendship > 0:
        iu = np.triu_indices(n_e, 1)
        hit = rng.random(len(iu[0])) < config.density_friendship
        friendships = {(f"e{a:04d}", f"e{b:04d}") for a, b in zip(iu[0][hit], iu[1][hit])}

    questions, pools = [], []
    for qn in range(config.n_questions):
        t = int(rng.integers(T))
        mix = np.full(T, 0.02 / max(T - 1, 1))
        mix[t] = 0.98
        mix /= mix.sum()
        kws = frozenset(rng.choice(topic_words[t], size=3, replace=False).tolist())
        questions.append(Question(f"q{qn:04d}", " ".join(bag(mix, int(rng.integers(15, 30)))), kws))
        n_pool = config.candidates_per_question
        on_topic = np.flatnonzero(main_topic == t)
        n_on = min(len(on_topic), int(round(config.on_topic_share * n_pool)))
        pick = set(rng.choice(on_topic, size=n_on, replace=False).tolist()) if n_on else set()
        rest = np.setdiff1d(np.arange(n_e), list(pick))
        pick |= set(rng.choice(rest, size=n_pool - len(pick), replace=False).tolist())
        pools.append(sorted(f"e{i:04d}" for i in pick))

    base = Dataset(tuple(experts), tuple(questions), tuple(documents), tuple(sorted(friendships)))
    ctx = FeatureContext(base, embeddings, config.feature_config)
    planted = config.planted
    responses, graphs = [], []
    for qn, (q, pool) in enumerate(zip(questions, pools)):
        g = graph_from_arrays(q.id, pool, *ctx.relations.pool_arrays(pool), ctx.pool_features(q, pool))
        y = sample_configurations(g, planted, 1, np.random.default_rng([config.seed, qn]))[0]
        g.labels = y
        graphs.append(g)
        for eid, lab in zip(pool, y):
            responses.append(ResponseRecord(q.id, eid, "agree" if lab else "decline"))

    ds = Dataset(base.experts, base.questions, base.documents, base.friendships, tuple(responses))
    return SynthData(ds, embeddings, config, graphs)
