import json

import numpy as np
import pytest

from boostmatch.boosting import BoostConfig
from boostmatch.checkpoint import Checkpoint
from boostmatch.dataset import ImageRecord, Manifest
from boostmatch.errors import ConfigurationError, DataError
from boostmatch.model import MatchModel
from boostmatch.pipeline import (
    CHECKPOINT_NAME,
    LOG_NAME,
    WEIGHTS_NAME,
    RunConfig,
    TrainingSession,
    evaluate,
    model_from_checkpoint,
    query_image,
)
from oracles import make_similarity_oracle

SMALL = RunConfig(seed=3, boost=BoostConfig(rounds=3, epochs_per_round=1, round_set_size=16, mini_batch=8))


def test_zero_rounds_writes_he_initialized_model(small_dataset, tmp_path):
    session = TrainingSession(small_dataset, SMALL)
    session.run(0, tmp_path)
    ckpt = Checkpoint.load(tmp_path / CHECKPOINT_NAME)
    fresh = MatchModel(SMALL.fen, SMALL.sdn, seed=SMALL.seed)
    restored = model_from_checkpoint(ckpt)
    for name, p in fresh.params.items():
        assert np.array_equal(restored.params[name].data, p.data)
    assert ckpt.state["rounds_completed"] == 0 and ckpt.state["pending_batch"] is None
    assert (tmp_path / WEIGHTS_NAME).read_text().splitlines() == [f"# universe_size\t{12 * 16}"]


def test_config_round_trip():
    assert RunConfig.from_dict(SMALL.to_dict()) == SMALL
    with pytest.raises(ConfigurationError):
        RunConfig(profile="huge")


def run_straight(dataset, out, rounds=3, prefetch=True):
    TrainingSession(dataset, SMALL, prefetch=prefetch).run(rounds, out)
    return (out / LOG_NAME).read_text(), (out / CHECKPOINT_NAME).read_bytes()


def test_resume_matches_uninterrupted_run(small_dataset, tmp_path):
    log_full, ckpt_full = run_straight(small_dataset, tmp_path / "full")
    part = tmp_path / "part"
    TrainingSession(small_dataset, SMALL).run(1, part)
    resumed = TrainingSession.resume(small_dataset, Checkpoint.load(part / CHECKPOINT_NAME))
    assert resumed.rounds_completed == 1
    resumed.run(3, part, append_log=True)
    assert (part / LOG_NAME).read_text() == log_full
    assert (part / CHECKPOINT_NAME).read_bytes() == ckpt_full
    assert (part / WEIGHTS_NAME).read_text() == (tmp_path / "full" / WEIGHTS_NAME).read_text()


def test_resume_from_zero_rounds(small_dataset, tmp_path):
    _, ckpt_full = run_straight(small_dataset, tmp_path / "full", rounds=2)
    TrainingSession(small_dataset, SMALL).run(0, tmp_path / "z")
    resumed = TrainingSession.resume(small_dataset, Checkpoint.load(tmp_path / "z" / CHECKPOINT_NAME))
    resumed.run(2, tmp_path / "z", append_log=True)
    assert (tmp_path / "z" / CHECKPOINT_NAME).read_bytes() == ckpt_full


def test_prefetch_does_not_change_results(small_dataset, tmp_path):
    a = run_straight(small_dataset, tmp_path / "a", rounds=2, prefetch=True)
    b = run_straight(small_dataset, tmp_path / "b", rounds=2, prefetch=False)
    assert a == b


def test_log_matches_round_reports(small_dataset, tmp_path):
    reports = TrainingSession(small_dataset, SMALL).run(2, tmp_path)
    lines = [json.loads(x) for x in (tmp_path / LOG_NAME).read_text().splitlines()]
    assert [x["round"] for x in lines] == [0, 1]
    for line, rep in zip(lines, reports):
        assert line["epsilon"] == rep.epsilon and line["beta"] == rep.beta
        assert line["beta"] == pytest.approx((1 - line["epsilon"]) / line["epsilon"])


def test_resume_refuses_other_manifest(small_dataset, tmp_path):
    TrainingSession(small_dataset, SMALL).run(0, tmp_path)
    ckpt = Checkpoint.load(tmp_path / CHECKPOINT_NAME)
    other = Manifest(small_dataset.root, {**small_dataset.header, "seed": 99}, small_dataset.records)
    with pytest.raises(DataError, match="different manifest"):
        TrainingSession.resume(other, ckpt)


def test_cannot_run_backwards(small_dataset, tmp_path):
    session = TrainingSession(small_dataset, SMALL)
    session.run(1)
    with pytest.raises(ConfigurationError):
        session.run(0)


# ------------------------------------------------------------------ evaluation


def copies_manifest(dataset):
    """Queries that are exact copies of the slide images."""
    targets = dataset.targets()
    queries = [
        ImageRecord(id=f"copy_{t.id}", role="query", split="test", file=t.file, matches=[t.id], level=1 + i % 10)
        for i, t in enumerate(targets)
    ]
    return Manifest(dataset.root, dataset.header, targets + queries)


def test_oracle_model_hits_every_copy(small_dataset):
    model = make_similarity_oracle(MatchModel(seed=1))
    report = evaluate(copies_manifest(small_dataset), model, ks=(1, 2))
    assert report.strata["noise_level"]["all"]["hit@1"] == 1.0
    assert report.strata["noise_level"]["all"]["count"] == 4


def test_report_counts_match_manifest(small_dataset):
    model = MatchModel(seed=2)
    report = evaluate(small_dataset, model, ks=(1, 2, 4))
    assert report.strata["noise_level"]["all"]["count"] == len(small_dataset.queries("test"))
    full = evaluate(small_dataset, model, split="all", ks=(1,))
    assert full.strata["noise_level"]["all"]["count"] == 20
    assert set(full.strata) == {"noise_level", "quality_level"}


def test_evaluation_is_deterministic(small_dataset):
    model = MatchModel(seed=2)
    a = evaluate(small_dataset, model, ks=(1,), workers=1).to_json()
    b = evaluate(small_dataset, model, ks=(1,), workers=3).to_json()
    assert a == b


def test_query_image_with_oracle(small_dataset):
    model = make_similarity_oracle(MatchModel(seed=1))
    for t in small_dataset.targets():
        ranking = query_image(small_dataset.path(t), small_dataset, model, k=2)
        assert ranking[0][0] == t.id and len(ranking) == 2
