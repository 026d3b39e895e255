"""Training sessions, checkpoint plumbing and dataset-level evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boosting import BoostConfig, RoundReport, WeightTable, run_round
from .checkpoint import Checkpoint
from .dataset import Manifest, load_gray
from .errors import ConfigurationError, DataError
from .evaluation import DEFAULT_KS, Ranking, RetrievalReport, rank_all, stratified_report
from .loader import Batch, BalancedLoader, LoaderConfig
from .model import FenConfig, MatchModel, SdnConfig
from .training import ImageStore, PairLearner, TrainConfig, downsample

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
WEIGHTS_NAME = "weights.tsv"
LOG_NAME = "train_log.jsonl"

PROFILES: Dict[str, Tuple[FenConfig, SdnConfig]] = {
    "desk": (FenConfig(), SdnConfig()),
    "paper": (FenConfig.paper(), SdnConfig.paper()),
}


@dataclass(frozen=True)
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    boost: BoostConfig = BoostConfig()
    train: TrainConfig = TrainConfig()
    mu: float = 0.2
    candidates: Optional[int] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")

    @property
    def fen(self) -> FenConfig:
        return PROFILES[self.profile][0]

    @property
    def sdn(self) -> SdnConfig:
        return PROFILES[self.profile][1]

    def loader(self) -> LoaderConfig:
        return LoaderConfig(m=self.boost.round_set_size, k=self.candidates, mu=self.mu, seed=self.seed, alpha=self.alpha)

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "seed": self.seed,
            "boost": asdict(self.boost),
            "train": asdict(self.train),
            "loader": asdict(self.loader()),
            "fen": asdict(self.fen),
            "sdn": {"hidden_sizes": list(self.sdn.hidden_sizes)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        loader = data["loader"]
        return cls(
            profile=data["profile"],
            seed=data["seed"],
            boost=BoostConfig(**data["boost"]),
            train=TrainConfig(**data["train"]),
            mu=loader["mu"],
            candidates=loader["k"],
            alpha=loader["alpha"],
        )


def load_store(manifest: Manifest, records, size: int) -> ImageStore:
    if manifest.image_size % size:
        raise ConfigurationError(f"model input {size} does not divide dataset image size {manifest.image_size}")
    return ImageStore({r.id: manifest.load_image(r) for r in records}, size)


class TrainingSession:
    """Boosting rounds over one manifest, with per-round persistence."""

    def __init__(self, manifest: Manifest, config: RunConfig, model: Optional[MatchModel] = None,
                 table: Optional[WeightTable] = None, rounds_completed: int = 0,
                 pending: Optional[Batch] = None, prefetch: bool = True):
        self.manifest = manifest
        self.config = config
        self.index = manifest.training_index()
        if config.alpha is not None and not 1 <= config.alpha <= len(self.index.target_ids):
            raise ConfigurationError(f"alpha must lie in [1, {len(self.index.target_ids)}], got {config.alpha}")
        self.model = model or MatchModel(config.fen, config.sdn, seed=config.seed)
        self.table = table or WeightTable(self.index.universe_size)
        self.rounds_completed = rounds_completed
        records = manifest.targets() + manifest.queries("train")
        self.store = load_store(manifest, records, config.fen.input_size)
        self.learner = PairLearner(self.model, self.store, config.train)
        self.loader = BalancedLoader(self.index, self.table, config.loader(), next_round=rounds_completed,
                                     pending=pending, prefetch=prefetch)

    # -- persistence ---------------------------------------------------------
    def checkpoint(self) -> Checkpoint:
        arrays = {f"model/{k}": v for k, v in self.model.state_arrays().items()}
        params = self.model.params
        for name in params:
            arrays[f"adam_m/{name}"] = params.first_moment[name]
            arrays[f"adam_v/{name}"] = params.second_moment[name]
        pending = self.loader.pending_batch()
        state = {
            "rounds_completed": self.rounds_completed,
            "adam_step": params.step,
            "weight_table": self.table.dumps(),
            "pending_batch": None if pending is None else pending.to_records(),
            "manifest_digest": self.manifest.digest(),
        }
        return Checkpoint(self.config.to_dict(), arrays, state)

    @classmethod
    def resume(cls, manifest: Manifest, ckpt: Checkpoint, prefetch: bool = True) -> "TrainingSession":
        if ckpt.state.get("manifest_digest") != manifest.digest():
            raise DataError("checkpoint was trained on a different manifest")
        config = RunConfig.from_dict(ckpt.configs)
        model = model_from_checkpoint(ckpt)
        params = model.params
        for name in params:
            params.first_moment[name] = ckpt.arrays[f"adam_m/{name}"]
            params.second_moment[name] = ckpt.arrays[f"adam_v/{name}"]
        params.step = int(ckpt.state["adam_step"])
        table = WeightTable.loads(ckpt.state["weight_table"])
        records = ckpt.state.get("pending_batch")
        pending = None if records is None else Batch.from_records(records)
        return cls(manifest, config, model, table, int(ckpt.state["rounds_completed"]), pending, prefetch)

    # -- training ------------------------------------------------------------
    def run(self, total_rounds: int, out: Optional[Path] = None, append_log: bool = False) -> List[RoundReport]:
        """Run rounds until ``total_rounds`` are complete, persisting after each one."""
        if total_rounds < self.rounds_completed:
            raise ConfigurationError(f"checkpoint already has {self.rounds_completed} rounds (> {total_rounds})")
        if out is not None:
            out = Path(out)
            out.mkdir(parents=True, exist_ok=True)
            log_path = out / LOG_NAME
            if not append_log:
                log_path.write_text("")
            self._persist(out)
        reports = []
        for r in range(self.rounds_completed, total_rounds):
            rng = np.random.default_rng([self.config.seed, 2, r])
            report = run_round(self.loader, self.table, self.learner, self.config.boost, round_index=r, rng=rng)
            self.rounds_completed = r + 1
            reports.append(report)
            logger.info("round %d: epsilon=%.6f beta=%.6f losses=%s", r, report.epsilon, report.beta,
                        ", ".join(f"{x:.4f}" for x in report.epoch_losses))
            if out is not None:
                with open(out / LOG_NAME, "a") as fh:
                    fh.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
                self._persist(out)
        return reports

    def _persist(self, out: Path) -> None:
        self.table.save(out / WEIGHTS_NAME)
        self.checkpoint().save(out / CHECKPOINT_NAME)


def model_from_checkpoint(ckpt: Checkpoint) -> MatchModel:
    try:
        config = RunConfig.from_dict(ckpt.configs)
        model = MatchModel(FenConfig(**ckpt.configs["fen"]), SdnConfig(tuple(ckpt.configs["sdn"]["hidden_sizes"])),
                           seed=config.seed)
        prefix = "model/"
        model.load_state_arrays({k[len(prefix):]: v for k, v in ckpt.arrays.items() if k.startswith(prefix)})
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"checkpoint does not describe a model: {exc}") from None
    return model


# -- evaluation -----------------------------------------------------------------


def _features(model: MatchModel, store: ImageStore, ids: Sequence[str], chunk: int = 128) -> np.ndarray:
    return np.concatenate([model.features(store.stack(ids[i:i + chunk])).data for i in range(0, len(ids), chunk)])


def evaluation_queries(manifest: Manifest, split: Optional[str] = None):
    """Held-out test queries when present, otherwise every query."""
    if split is None:
        split = "test" if manifest.queries("test") else "all"
    queries = manifest.queries(None if split == "all" else split)
    if not queries:
        raise DataError(f"manifest has no {split!r} queries")
    return queries


def evaluate(manifest: Manifest, model: MatchModel, split: Optional[str] = None,
             ks: Sequence[int] = DEFAULT_KS, workers: int = 1) -> RetrievalReport:
    """Rank every slide for each evaluated query; report by noise level and quality decile."""
    targets = manifest.targets()
    queries = evaluation_queries(manifest, split)
    size = model.fen_config.input_size
    store = load_store(manifest, targets + queries, size)
    tids = [t.id for t in targets]
    qids = [q.id for q in queries]
    rankings = rank_all(qids, _features(model, store, qids), tids, _features(model, store, tids), model, workers=workers)
    truth = {q.id: set(q.matches) for q in queries}
    groupings = {}
    if all(q.level is not None for q in queries):
        groupings["noise_level"] = {q.id: q.level for q in queries}
    quality = manifest.quality_levels(queries)
    if quality is not None:
        groupings["quality_level"] = quality
    return stratified_report(rankings, truth, groupings, ks)


def query_image(path: Path, manifest: Manifest, model: MatchModel, k: int) -> Ranking:
    """Top-k slides for an image file, resized to the dataset's image size if needed."""
    image = load_gray(path, manifest.image_size)
    size = model.fen_config.input_size
    targets = manifest.targets()
    store = load_store(manifest, targets, size)
    tids = [t.id for t in targets]
    qf = model.features(downsample(image, size)[None, None].astype(np.float32)).data
    ranking = rank_all(["query"], qf, tids, _features(model, store, tids), model)["query"]
    return ranking[:k]
