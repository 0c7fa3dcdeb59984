import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expertmatch.core import Question
from expertmatch.errors import EmptyDocumentSet, EmptyQuery
from expertmatch.retrieval import (
    FLOOR,
    CollectionIndex,
    build_index,
    generate_candidates,
    index_from_tokens,
    lm_query_logprob,
    lm_word_prob,
    score_all,
)
from oracles import dirichlet_prob


def test_counts_and_default_lambda():
    idx = index_from_tokens({"e1": "a a b".split(), "e2": "b c".split()})
    assert idx.collection_length == 5
    assert idx.collection_counts["b"] == 2
    assert idx.lam == 2.5
    assert idx.collection_length == idx.doc_lengths.sum()


def test_empty_expert_document():
    with pytest.raises(EmptyDocumentSet):
        index_from_tokens({"e1": ["a"], "e2": []})


def test_hand_example_two_thirds():
    idx = index_from_tokens({"d": "a a b".split()}, lam=1.0)
    assert lm_word_prob(idx, "a", "d") == pytest.approx(2 / 3, abs=1e-15)


def test_no_smoothing_is_mle():
    idx = index_from_tokens({"e1": "a a b".split(), "e2": "b c c c".split()}, lam=0.0)
    assert lm_word_prob(idx, "a", "e1") == 2 / 3
    assert lm_word_prob(idx, "c", "e1") == 0.0


def test_absent_word_uses_collection_term():
    idx = index_from_tokens({"e1": "a a b".split(), "e2": "b c".split()}, lam=2.0)
    assert lm_word_prob(idx, "c", "e1") == pytest.approx((2 / 5) * (1 / 5))


def test_out_of_collection_floor():
    idx = index_from_tokens({"e1": ["a"]})
    assert lm_word_prob(idx, "zzz", "e1") == FLOOR


def test_query_logprob():
    idx = index_from_tokens({"e1": "a a b".split(), "e2": "b c".split()})
    one = lm_query_logprob(idx, ["a"], "e1")
    assert one == pytest.approx(math.log(lm_word_prob(idx, "a", "e1")))
    two = lm_query_logprob(idx, ["a", "c"], "e1")
    assert two == pytest.approx(one + math.log(lm_word_prob(idx, "c", "e1")))
    with pytest.raises(EmptyQuery):
        lm_query_logprob(idx, [], "e1")
    with pytest.raises(EmptyQuery):
        score_all(idx, Question("q", "!!!"))


token_docs = st.dictionaries(
    st.sampled_from([f"e{k}" for k in range(6)]),
    st.lists(st.sampled_from(list("abcdefg")), min_size=1, max_size=15),
    min_size=1)


@settings(max_examples=80, deadline=None)
@given(token_docs, st.one_of(st.none(), st.floats(0.1, 50)))
def test_probabilities_sum_to_one(docs, lam):
    idx = index_from_tokens(docs, lam)
    for e in docs:
        total = sum(lm_word_prob(idx, w, e) for w in idx.vocabulary)
        assert abs(total - 1.0) < 1e-9


@settings(max_examples=80, deadline=None)
@given(token_docs, st.sampled_from(list("abcdefg")))
def test_matches_formula_oracle(docs, word):
    idx = index_from_tokens(docs)
    collection = list(docs.values())
    if word not in idx.vocabulary:
        return
    for e, toks in docs.items():
        assert lm_word_prob(idx, word, e) == pytest.approx(dirichlet_prob(word, toks, collection, idx.lam),
                                                           rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(token_docs, st.lists(st.sampled_from(list("abcdefgxy")), min_size=1, max_size=8), st.randoms())
def test_permutation_invariant_and_vectorised(docs, query, rnd):
    idx = index_from_tokens(docs)
    shuffled = list(query)
    rnd.shuffle(shuffled)
    vec = score_all(idx, query)
    for e in docs:
        a = lm_query_logprob(idx, query, e)
        assert a == pytest.approx(lm_query_logprob(idx, shuffled, e), rel=1e-12, abs=1e-12)
        assert a == pytest.approx(vec[idx.position[e]], rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(list("abc")), min_size=1, max_size=10), st.sampled_from(list("abc")))
def test_monotone_in_document_count(toks, word):
    # the extra occurrence moves over from the other expert, so collection counts stay fixed
    other = list("abc") * 3
    if word not in other:
        return
    before = index_from_tokens({"e": toks, "o": other}, lam=3.0)
    moved = list(other)
    moved.remove(word)
    after = index_from_tokens({"e": toks + [word], "o": moved}, lam=3.0)
    p0 = lm_word_prob(before, word, "e")
    p1 = lm_word_prob(after, word, "e")
    assert p1 >= p0 - 1e-15


def test_candidates_clamp_and_ties():
    idx = index_from_tokens({f"e{k}": ["a", "b"] for k in range(5)})
    cl = generate_candidates(idx, ["a"], k=100, question_id="q")
    assert cl.expert_ids == [f"e{k}" for k in range(5)]
    idx = index_from_tokens({"e9": ["x", "y"], "e2": ["x", "y"], "e5": ["z", "z"]})
    assert generate_candidates(idx, ["x"], k=2).expert_ids == ["e2", "e9"]


def test_candidates_toy_corpus():
    idx = index_from_tokens({
        "e1": "graph learning models".split(),
        "e2": "graph theory proofs".split(),
        "e3": "learning rates tuning".split(),
    })
    cl = generate_candidates(idx, ["graph", "learning"], k=3)
    assert cl.expert_ids[0] == "e1"
    scores = [s for _, s in cl.entries]
    assert scores == sorted(scores, reverse=True)
    with pytest.raises(ValueError):
        generate_candidates(idx, ["graph"], k=0)


def test_fifty_experts_distribution(toy):
    rng = np.random.default_rng(3)
    vocab = [f"w{k}" for k in range(40)]
    docs = {f"e{k:02d}": rng.choice(vocab, size=int(rng.integers(5, 60))).tolist() for k in range(50)}
    idx = index_from_tokens(docs)
    for e in docs:
        assert abs(sum(lm_word_prob(idx, w, e) for w in idx.vocabulary) - 1) < 1e-9


def test_index_cache_round_trip(toy, tmp_path):
    idx = build_index(toy)
    idx.save(tmp_path / "idx.bin")
    again = CollectionIndex.load(tmp_path / "idx.bin")
    q = toy.question("q1")
    assert np.array_equal(score_all(idx, q), score_all(again, q))
