"""Skip-gram word vectors, normalized bag-of-words vectors and vector files."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyAfterFilter, FormatError, GuardExceeded, VocabularyTooSmall

log = logging.getLogger(__name__)

FULL_SOFTMAX_MAX_VOCAB = 20_000


@dataclass(frozen=True)
class SkipgramConfig:
    dim: int = 50
    window: int = 5
    epochs: int = 5
    learning_rate: float = 0.05
    mode: str = "full_softmax"  # or "negative_sampling"
    negatives: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.epochs < 1 or self.learning_rate <= 0:
            raise ValueError("epochs and learning_rate must be positive")
        if self.mode not in ("full_softmax", "negative_sampling"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "negative_sampling" and self.negatives < 1:
            raise ValueError("negatives must be >= 1")


@dataclass
class EmbeddingTable:
    words: list[str]
    vectors: np.ndarray                      # input vectors v_w, shape (W, m)
    output_vectors: np.ndarray | None = None  # v'_w; absent for loaded tables
    history: list[float] = field(default_factory=list)  # mean log-likelihood per epoch

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise FormatError("duplicate word in embedding table")
        if self.vectors.shape[0] != len(self.words):
            raise FormatError("vector count does not match vocabulary size")
        if not np.all(np.isfinite(self.vectors)):
            raise FormatError("non-finite embedding entries")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def get(self, word):
        """Vector for ``word`` or ``None`` when it has no embedding."""
        i = self.index.get(word)
        return None if i is None else self.vectors[i]

    def softmax(self, word) -> np.ndarray:
        """Full-softmax context distribution ``p(.|word)`` over the vocabulary."""
        if self.output_vectors is None:
            raise ValueError("table has no output vectors")
        logits = self.output_vectors @ self.vectors[self.index[word]]
        logits -= logits.max()
        p = np.exp(logits)
        return p / p.sum()


# ------------------------------------------------------------------ training

def skipgram_pairs(ids: Sequence[np.ndarray], window: int) -> np.ndarray:
    """All (center, context) index pairs within ``window`` of each other."""
    out = []
    for seq in ids:
        seq = np.asarray(seq)
        for off in range(1, window + 1):
            if off >= len(seq):
                break
            out.append(np.stack([seq[:-off], seq[off:]], axis=1))
            out.append(np.stack([seq[off:], seq[:-off]], axis=1))
    if not out:
        return np.empty((0, 2), dtype=np.intp)
    return np.concatenate(out).astype(np.intp)


def softmax_loss_and_grad(v_in, v_out, pairs):
    """Mean negative log-likelihood of ``pairs`` under the full softmax.

    Returns ``(loss, grad_in, grad_out)``; gradients are of the loss (so
    ascent on the objective is a step against them).
    """
    centers, contexts = pairs[:, 0], pairs[:, 1]
    h = v_in[centers]                        # (P, m)
    logits = h @ v_out.T                     # (P, W)
    logits -= logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    z = expl.sum(axis=1, keepdims=True)
    probs = expl / z
    n = len(pairs)
    loss = -(logits[np.arange(n), contexts] - np.log(z[:, 0])).mean()
    err = probs
    err[np.arange(n), contexts] -= 1.0
    err /= n
    grad_out = err.T @ h
    grad_in = np.zeros_like(v_in)
    np.add.at(grad_in, centers, err @ v_out)
    return loss, grad_in, grad_out


def _neg_sampling_step(v_in, v_out, centers, contexts, negs, lr):
    h = v_in[centers]
    targets = np.concatenate([contexts[:, None], negs], axis=1)  # (B, 1+k)
    labels = np.zeros(targets.shape)
    labels[:, 0] = 1.0
    u = v_out[targets]                                           # (B, 1+k, m)
    score = np.einsum("bkm,bm->bk", u, h)
    sig = 1.0 / (1.0 + np.exp(-score))
    g = labels - sig                                             # ascent direction
    d_h = np.einsum("bk,bkm->bm", g, u)
    d_u = g[:, :, None] * h[:, None, :]
    np.add.at(v_out, targets.ravel(), lr * d_u.reshape(-1, h.shape[1]))
    np.add.at(v_in, centers, lr * d_h)


def train_skipgram(corpus: Sequence[Sequence[str]], config: SkipgramConfig = SkipgramConfig(),
                   batch_size: int = 64) -> EmbeddingTable:
    """Stochastic gradient ascent on the skip-gram log-likelihood.

    ``history`` on the returned table holds the average per-token objective
    ``(1/T) sum_t sum_j log p(w_{t+j}|w_t)`` measured after each epoch (full
    softmax), or the negative-sampling surrogate in that mode.
    """
    counts = Counter(w for sent in corpus for w in sent)
    if len(counts) < 2:
        raise VocabularyTooSmall(f"need >= 2 distinct words, got {len(counts)}")
    if config.mode == "full_softmax" and len(counts) > FULL_SOFTMAX_MAX_VOCAB:
        raise GuardExceeded(
            f"full softmax over {len(counts)} words exceeds {FULL_SOFTMAX_MAX_VOCAB}; "
            "use negative_sampling")
    words = sorted(counts)
    index = {w: i for i, w in enumerate(words)}
    ids = [np.array([index[w] for w in sent], dtype=np.intp) for sent in corpus]
    n_tokens = sum(len(s) for s in ids)
    pairs = skipgram_pairs(ids, config.window)
    if len(pairs) == 0:
        raise VocabularyTooSmall("corpus has no context pairs")

    rng = np.random.default_rng(config.seed)
    W, m = len(words), config.dim
    v_in = (rng.random((W, m)) - 0.5) / m
    v_out = np.zeros((W, m))
    if config.mode == "negative_sampling":
        freq = np.array([counts[w] for w in words], dtype=float) ** 0.75
        noise = freq / freq.sum()

    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(pairs), batch_size):
            batch = pairs[order[start:start + batch_size]]
            if config.mode == "full_softmax":
                _, g_in, g_out = softmax_loss_and_grad(v_in, v_out, batch)
                # loss is a batch mean; scale back to per-pair SGD steps
                v_in -= config.learning_rate * len(batch) * g_in
                v_out -= config.learning_rate * len(batch) * g_out
            else:
                negs = rng.choice(W, size=(len(batch), config.negatives), p=noise)
                _neg_sampling_step(v_in, v_out, batch[:, 0], batch[:, 1], negs,
                                   config.learning_rate)
        if config.mode == "full_softmax":
            loss, _, _ = softmax_loss_and_grad(v_in, v_out, pairs)
            objective = -loss * len(pairs) / n_tokens
        else:
            objective = float("nan")
        history.append(float(objective))
        log.debug("skip-gram epoch %d objective %.6f", epoch + 1, objective)
    return EmbeddingTable(words, v_in, v_out, history)


# ---------------------------------------------------------------------- nBOW

@dataclass(frozen=True)
class NbowVector:
    indices: np.ndarray   # sorted word indices into the shared vocabulary
    weights: np.ndarray   # positive, sums to 1

    def as_dict(self, words=None):
        keys = self.indices.tolist() if words is None else [words[i] for i in self.indices]
        return dict(zip(keys, self.weights.tolist()))

    def __len__(self):
        return len(self.indices)


def nbow(tokens, vocabulary) -> NbowVector:
    """Normalized bag of words over tokens present in ``vocabulary``.

    ``vocabulary`` maps word -> index (an ``EmbeddingTable`` works too).
    Out-of-vocabulary tokens are dropped.
    """
    lookup = vocabulary.index if isinstance(vocabulary, EmbeddingTable) else vocabulary
    counts = Counter(lookup[t] for t in tokens if t in lookup)
    if not counts:
        raise EmptyAfterFilter("no token has an embedding")
    idx = np.array(sorted(counts), dtype=np.intp)
    w = np.array([counts[i] for i in idx], dtype=float)
    return NbowVector(idx, w / w.sum())


# ------------------------------------------------------------------ file I/O

def save_vectors(table: EmbeddingTable, path) -> None:
    """word2vec text format; ``path`` may also be an open text stream."""
    if hasattr(path, "write"):
        _write_vectors(table, path)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_vectors(table, fh)


def _write_vectors(table, fh):
    fh.write(f"{len(table)} {table.dim}\n")
    for w, vec in zip(table.words, table.vectors):
        fh.write(w + " " + " ".join(format(x, ".17g") for x in vec) + "\n")


def load_vectors(path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: header must be '<count> <dim>'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError(f"{path}: non-integer header") from None
        words, rows = [], []
        for line_no, line in enumerate(fh, 2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise FormatError(f"{path}:{line_no}: expected {dim} values, got {len(parts) - 1}")
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError:
                raise FormatError(f"{path}:{line_no}: bad float") from None
            words.append(parts[0])
    if len(words) != count:
        raise FormatError(f"{path}: header says {count} words, found {len(words)}")
    return EmbeddingTable(words, np.array(rows, dtype=float).reshape(count, dim))
