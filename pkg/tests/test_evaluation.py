import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boostmatch.errors import ContractError, DataError
from boostmatch.evaluation import (
    hit_rate,
    rank_all,
    rank_scores,
    rank_targets,
    recall_at_k,
    score_matrix,
    scorer_rankings,
    stratified_report,
)
from boostmatch.model import FenConfig, MatchModel, SdnConfig, pair_score

TINY = dict(fen_config=FenConfig(input_size=16, conv_layers=2, base_kernels=4, feature_dim=8),
            sdn_config=SdnConfig(hidden_sizes=(8, 4)))


def test_constant_scores_rank_by_id():
    assert [t for t, _ in rank_scores(["c", "a", "b"], [0.0, 0.0, 0.0])] == ["a", "b", "c"]


def test_three_target_example():
    assert [t for t, _ in rank_scores(["t1", "t2", "t3"], [0.2, 0.9, 0.5])] == ["t2", "t3", "t1"]


def test_rank_rejects_empty_and_mismatch():
    with pytest.raises(ContractError):
        rank_scores([], [])
    with pytest.raises(ContractError):
        rank_scores(["a"], [1.0, 2.0])


@settings(max_examples=50)
@given(st.lists(st.sampled_from([-1.0, 0.0, 0.5, 2.0]), min_size=1, max_size=30))
def test_ranking_is_sorted_with_id_tiebreak(scores):
    ids = [f"t{i:02d}" for i in range(len(scores))]
    ranked = rank_scores(ids, scores)
    keys = [(-s, t) for t, s in ranked]
    assert keys == sorted(keys)


def test_rank_targets_matches_brute_force_rescoring():
    rng = np.random.default_rng(0)
    model = MatchModel(seed=3, dtype=np.float64, **TINY)
    targets = {f"t{i:02d}": rng.random((1, 16, 16)) for i in range(50)}
    for _ in range(3):
        q = rng.random((1, 16, 16))
        brute = sorted(((t, pair_score(q[0], img[0], model)) for t, img in targets.items()), key=lambda p: (-p[1], p[0]))
        got = rank_targets(q, targets, model, batch_size=7)
        assert [t for t, _ in got] == [t for t, _ in brute]
        np.testing.assert_allclose([s for _, s in got], [s for _, s in brute], atol=1e-12)


def test_rank_all_threads_match_serial():
    rng = np.random.default_rng(1)
    model = MatchModel(seed=4, **TINY)
    qf = rng.uniform(-1, 1, (40, 8)).astype(np.float32)
    tf = rng.uniform(-1, 1, (12, 8)).astype(np.float32)
    qids = [f"q{i}" for i in range(40)]
    tids = [f"t{i}" for i in range(12)]
    assert rank_all(qids, qf, tids, tf, model, workers=4, chunk=5) == rank_all(qids, qf, tids, tf, model)
    np.testing.assert_array_equal(score_matrix(model, qf[:3], tf)[1], model.score_features(np.repeat(qf[1:2], 12, 0), tf))


# ------------------------------------------------------------------ hit rates


def unique_truth(n):
    return {f"q{i}": {f"t{i}"} for i in range(n)}


def test_oracle_and_adversarial_scorers():
    truth = unique_truth(20)
    queries, targets = list(truth), [f"t{i}" for i in range(20)]
    oracle = scorer_rankings(queries, targets, lambda q, t: 1.0 if t in truth[q] else -1.0)
    adversary = scorer_rankings(queries, targets, lambda q, t: -1.0 if t in truth[q] else 1.0)
    for k in (1, 5, 10):
        assert hit_rate(oracle, truth, k) == 1.0
        assert hit_rate(adversary, truth, k) == 0.0


def test_random_scorer_matches_k_over_n():
    rng = np.random.default_rng(2)
    n_targets, k, n_queries = 100, 10, 10_000
    targets = [f"t{i:03d}" for i in range(n_targets)]
    truth = {f"q{i}": {targets[rng.integers(n_targets)]} for i in range(n_queries)}
    rankings = {q: rank_scores(targets, rng.random(n_targets)) for q in truth}
    assert abs(hit_rate(rankings, truth, k) - k / n_targets) <= 0.02


def test_hit_rate_errors():
    rankings = {"q0": [("t0", 1.0), ("t1", 0.0)]}
    with pytest.raises(DataError):
        hit_rate(rankings, {"qx": {"t0"}}, 1)
    with pytest.raises(ContractError):
        hit_rate(rankings, {"q0": {"t0"}}, 3)


def test_recall_counts_multiple_positives():
    rankings = {"q": [("a", 3.0), ("x", 2.0), ("b", 1.0)]}
    truth = {"q": {"a", "b"}}
    assert recall_at_k(rankings, truth, 1) == 0.5
    assert recall_at_k(rankings, truth, 3) == 1.0
    assert hit_rate(rankings, truth, 1) == 1.0


# ------------------------------------------------------------------ reports


def random_instance(seed, n_queries=60, n_targets=15):
    rng = np.random.default_rng(seed)
    targets = [f"t{i:02d}" for i in range(n_targets)]
    truth = {f"q{i:03d}": {targets[rng.integers(n_targets)]} for i in range(n_queries)}
    rankings = {q: rank_scores(targets, rng.random(n_targets)) for q in truth}
    levels = {q: int(rng.integers(1, 11)) for q in truth}
    return rankings, truth, levels


def test_one_query_per_level_all_correct():
    truth = {f"q{l}": {"t0"} for l in range(1, 11)}
    rankings = {q: [("t0", 1.0)] + [(f"t{i}", 0.0) for i in range(1, 12)] for q in truth}
    report = stratified_report(rankings, truth, {"noise_level": {f"q{l}": l for l in range(1, 11)}})
    for l in range(1, 11):
        assert report.rate("noise_level", l, 1) == 1.0
    assert report.rate("noise_level", "all", 10) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_pooled_is_count_weighted_mean(seed):
    rankings, truth, levels = random_instance(seed)
    report = stratified_report(rankings, truth, {"noise_level": levels})
    strata = report.strata["noise_level"]
    for k in report.ks:
        levels_only = [v for name, v in strata.items() if name != "all"]
        weighted = sum(v["count"] * v[f"hit@{k}"] for v in levels_only) / sum(v["count"] for v in levels_only)
        assert strata["all"][f"hit@{k}"] == pytest.approx(weighted, abs=1e-12)
        # monotone in k
    for v in strata.values():
        rates = [v[f"hit@{k}"] for k in report.ks]
        assert rates == sorted(rates)


def test_empty_stratum_is_absent():
    rankings, truth, _ = random_instance(0, n_queries=20)
    levels = {q: 1 + (i % 3) for i, q in enumerate(rankings)}
    report = stratified_report(rankings, truth, {"noise_level": levels})
    assert set(report.strata["noise_level"]) == {"1", "2", "3", "all"}
    assert report.rate("noise_level", 7, 1) is None


def test_report_serializations():
    rankings, truth, levels = random_instance(1)
    report = stratified_report(rankings, truth, {"noise_level": levels, "quality_level": levels})
    data = json.loads(report.to_json())
    assert data["ks"] == [1, 5, 10]
    assert data["strata"]["noise_level"]["all"]["count"] == 60
    assert len(data["rankings"]) == 60
    table = report.to_table()
    assert "top 1" in table and "quality_level" in table
    assert report.to_json() == report.to_json()
