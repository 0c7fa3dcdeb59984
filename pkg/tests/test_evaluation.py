import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expertmatch.core import Dataset, Document, Expert, Question, ResponseRecord
from expertmatch.embedding import load_vectors
from expertmatch.errors import NoRelevant, NoResponses
from expertmatch.evaluation import (
    ExperimentReport,
    QuestionData,
    RankedResult,
    average_precision,
    baseline_rank,
    build_question_data,
    decline_stats,
    evaluate_rankings,
    mean_average_precision,
    precision_at_n,
    r_prec,
    run_experiment,
)
from expertmatch.features import FeatureConfig, FeatureContext, PoolStatistics
from expertmatch.rankfg import TrainConfig
from expertmatch.synth import SynthConfig, synth_generate
from oracles import brute_average_precision, brute_precision_at, brute_r_prec


# ------------------------------------------------------------------ metrics

def test_precision_examples():
    assert precision_at_n([1, 1, 1, 0], 3) == 1.0
    assert precision_at_n([1, 0, 1], 3) == pytest.approx(2 / 3)
    assert precision_at_n([0, 0, 0], 5) == 0.0
    assert precision_at_n([1], 5) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        precision_at_n([1], 0)


def test_average_precision_examples():
    assert average_precision([1, 0, 1]) == pytest.approx(5 / 6)
    assert average_precision([1, 1, 1]) == 1.0
    assert average_precision([0, 0]) == 0.0
    assert mean_average_precision([[1, 0, 1], [0, 0]]) == pytest.approx(5 / 12)


def test_r_prec_examples():
    assert r_prec([1, 0, 0, 1]) == 0.5
    assert r_prec([1, 1, 0]) == 1.0
    with pytest.raises(NoRelevant):
        r_prec([0, 0])


def test_ranked_result_needs_labels():
    with pytest.raises(ValueError):
        RankedResult("q", ["a", "b"], [1])
    assert precision_at_n(RankedResult("q", ["a", "b"], [0, 1]), 1) == 0.0


def test_metrics_match_brute_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        labels = rng.integers(0, 2, int(rng.integers(1, 21))).tolist()
        for n in (1, 3, 5, 10, 20):
            assert precision_at_n(labels, n) == brute_precision_at(labels, n)
        assert average_precision(labels) == pytest.approx(brute_average_precision(labels), abs=1e-15)
        if any(labels):
            assert r_prec(labels) == brute_r_prec(labels)
            assert r_prec(labels) == precision_at_n(labels, sum(labels))


@settings(max_examples=200)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=20), st.data())
def test_promoting_irrelevant_never_raises_precision(labels, data):
    if 0 not in labels:
        return
    zeros = [k for k, v in enumerate(labels) if v == 0]
    k = data.draw(st.sampled_from(zeros))
    dest = data.draw(st.integers(0, k))
    moved = list(labels)
    moved.insert(dest, moved.pop(k))
    for n in range(1, len(labels) + 1):
        assert precision_at_n(moved, n) <= precision_at_n(labels, n)


@settings(max_examples=200)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=20))
def test_ap_one_iff_relevant_first(labels):
    relevant_first = sorted(labels, reverse=True) == labels and any(labels)
    assert (average_precision(labels) == 1.0) == relevant_first


def test_evaluate_rankings_skips_r_prec_for_empty():
    out = evaluate_rankings([[1, 0, 1], [0, 0, 0]], ns=(3,))
    assert out["P@3"] == pytest.approx(1 / 3)
    assert out["MAP"] == pytest.approx(5 / 12)
    assert out["R-prec"] == pytest.approx(0.5)


# ----------------------------------------------------------------- baselines

def test_jaccard_hand_ranking(toy, toy_dir):
    ctx = FeatureContext(toy, load_vectors(toy_dir / "vectors.txt"), FeatureConfig(keyword_k=0))
    # question keywords {graph}; interests e1 {graph, learning}, e2 {parsing}, e3 none
    res = baseline_rank("jaccard", toy.question("q1"), ["e3", "e2", "e1"], ctx, {"e1": 1})
    assert res.expert_ids == ["e1", "e2", "e3"]
    assert res.labels == [1, 0, 0]


def test_qtoe_ascending_and_lm_descending():
    pool = PoolStatistics(["a", "b"], np.zeros(4), np.zeros(4), {"a": 0.9, "b": 0.2},
                          {"a": 0.5, "b": 0.5}, {"a": 0.0, "b": 1.0}, {"a": -3.0, "b": -7.0})
    q = Question("q", "x")
    assert baseline_rank("qtoe", q, ["a", "b"], None, pool=pool).expert_ids == ["b", "a"]
    assert baseline_rank("jaccard", q, ["a", "b"], None, pool=pool).expert_ids == ["a", "b"]
    assert baseline_rank("lm", q, ["a", "b"], None, pool=pool).expert_ids == ["a", "b"]


# --------------------------------------------------------------- experiments

@pytest.fixture(scope="module")
def small_synth():
    sd = synth_generate(SynthConfig(n_questions=20, candidates_per_question=5, n_experts=40, seed=3))
    ctx = FeatureContext(sd.dataset, sd.embeddings, sd.config.feature_config)
    return sd, build_question_data(sd.dataset, ctx)


def test_question_data_matches_synth_graphs(small_synth):
    sd, data = small_synth
    assert [qd.graph.question_id for qd in data] == [g.question_id for g in sd.graphs]
    for qd, g in zip(data, sd.graphs):
        assert qd.graph.candidates == g.candidates
        assert np.allclose(qd.graph.features, g.features)
        assert np.array_equal(qd.graph.labels, g.labels)
        assert np.array_equal(qd.graph.pairs, g.pairs)


FAST = TrainConfig(learning_rate=0.1, max_iterations=60)


def test_experiment_deterministic(small_synth):
    sd, data = small_synth
    a = run_experiment(sd.dataset, "rankfg", data=data, repetitions=3, train_config=FAST)
    b = run_experiment(sd.dataset, "rankfg", data=data, repetitions=3, train_config=FAST)
    assert a.to_json() == b.to_json()
    assert a.seeds == [0, 1, 2] and len(a.params) == 3


def test_worker_count_does_not_matter(small_synth):
    sd, data = small_synth
    a = run_experiment(sd.dataset, "rankfg-nocorr", data=data, repetitions=2, train_config=FAST)
    b = run_experiment(sd.dataset, "rankfg-nocorr", data=data, repetitions=2, train_config=FAST,
                       workers=2)
    assert a.to_json() == b.to_json()
    assert all(t[8:] == [0.0, 0.0, 0.0] for t in a.params)


def test_single_repetition_mean(small_synth):
    sd, data = small_synth
    rep = run_experiment(sd.dataset, "qtoe", data=data, repetitions=1)
    assert rep.metrics == rep.repetitions[0]


def test_report_mean_is_mean(small_synth):
    sd, data = small_synth
    rep = run_experiment(sd.dataset, "lm", data=data, repetitions=4)
    for name, value in rep.metrics.items():
        assert abs(value - sum(r[name] for r in rep.repetitions) / 4) < 1e-12


def test_baseline_ignores_training(small_synth):
    sd, data = small_synth
    a = run_experiment(sd.dataset, "jaccard", data=data, repetitions=2)
    b = run_experiment(sd.dataset, "jaccard", data=data, repetitions=2, train_config=FAST)
    assert a.metrics == b.metrics and a.params == b.params == []


def test_external_scores(small_synth):
    sd, data = small_synth
    # scoring every candidate by its true label gives a perfect ranking
    scores = {qd.graph.question_id: dict(zip(qd.graph.candidates, qd.graph.labels.tolist()))
              for qd in data}
    rep = run_experiment(sd.dataset, "external", data=data, repetitions=2, external_scores=scores)
    assert rep.metrics["R-prec"] == 1.0
    with pytest.raises(ValueError):
        run_experiment(sd.dataset, "external", data=data)
    with pytest.raises(ValueError):
        run_experiment(sd.dataset, "svm", data=data)


def test_baseline_needs_pool(small_synth):
    sd, data = small_synth
    bare = [QuestionData(qd.graph) for qd in data]
    with pytest.raises(ValueError):
        run_experiment(sd.dataset, "jaccard", data=bare, repetitions=1)
    run_experiment(sd.dataset, "rankfg", data=bare, repetitions=1, train_config=FAST)


def test_report_formats():
    rep = ExperimentReport("lm", {"P@3": 0.5, "MAP": 0.25}, [{"P@3": 0.5, "MAP": 0.25}], [7])
    assert json.loads(rep.to_json())["metrics"]["P@3"] == 0.5
    table = rep.to_table().splitlines()
    assert table[-1].split() == ["mean", "50.0", "25.0"]
    assert rep.to_csv().splitlines() == ["repetition,seed,P@3,MAP", "0,7,0.5,0.25"]


def test_no_responses():
    ds = Dataset((Expert("e", document_ids=("d",)),), (Question("q", "x"),), (Document("d", "x"),))
    with pytest.raises(NoResponses):
        decline_stats(ds)
    with pytest.raises(NoResponses):
        run_experiment(ds, "lm", data=[])


# --------------------------------------------------------- decline statistics

def _responses_dataset(labels, nationality=None, venue="J"):
    n = len(labels)
    experts = tuple(Expert(f"e{k:04d}", nationality=(nationality[k] if nationality else None))
                    for k in range(n))
    return Dataset(experts, (Question("q", "x", venue=venue),), (Document("d", "x"),), (),
                   tuple(ResponseRecord("q", f"e{k:04d}", lab) for k, lab in enumerate(labels)))


def test_overall_decline_rate():
    ds = _responses_dataset(["agree"] * 391 + ["decline"] * 436)
    stats = decline_stats(ds)
    assert round(stats["overall_decline_rate"], 3) == 0.527
    assert stats["per_venue"]["J"]["responses"] == 827
    assert decline_stats(_responses_dataset(["agree"] * 5))["overall_decline_rate"] == 0.0


def test_conditional_rate_for_declining_pair():
    ds = _responses_dataset(["decline", "decline", "agree"], nationality=["us", "us", None])
    cond = decline_stats(ds)["conditional"]["same_nationality"]
    assert cond["with"] == 1.0 and cond["n_with"] == 2
    assert cond["without"] == 0.0 and cond["n_without"] == 1
    assert decline_stats(ds)["conditional"]["friendship"]["with"] is None
