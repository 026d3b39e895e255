"""Boosting round driver: weight table bookkeeping and sample reweighting.

A single learner is trained continually; boosting only decides which pairs
the loader should favour next by growing the stored weight of every pair the
learner still misclassifies after a round.
"""

from __future__ import annotations

import io
import logging
import math
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, ContractError, DataError

logger = logging.getLogger(__name__)

TABLE_HEADER = "# universe_size"


@dataclass(frozen=True, order=True)
class SampleKey:
    """Ordered (query slot, target slot) identifier of a training pair."""

    query_id: str
    target_id: str

    def __post_init__(self):
        if not self.query_id or not self.target_id:
            raise ContractError(f"sample ids must be non-empty, got ({self.query_id!r}, {self.target_id!r})")
        if "\t" in self.query_id + self.target_id or "\n" in self.query_id + self.target_id:
            raise ContractError("sample ids may not contain tabs or newlines")


class WeightSnapshot(Mapping):
    """Read-only view of the table as of one completed commit."""

    def __init__(self, weights: Dict[SampleKey, float], universe_size: int):
        self._weights = MappingProxyType(weights)
        self.universe_size = universe_size
        self.default_weight = 1.0 / universe_size

    def __getitem__(self, key: SampleKey) -> float:
        return self._weights[key]

    def __iter__(self):
        return iter(self._weights)

    def __len__(self) -> int:
        return len(self._weights)

    def weight(self, key: SampleKey) -> float:
        return self._weights.get(key, self.default_weight)


class WeightTable:
    """Sparse map from sample pairs to boosting weights.

    Pairs never seen carry the implicit weight 1 / universe_size. Writers
    replace the whole mapping in one locked step, so a snapshot always reflects
    a completed commit.
    """

    def __init__(self, universe_size: int, weights: Optional[Dict[SampleKey, float]] = None):
        if universe_size < 1:
            raise ContractError(f"universe_size must be positive, got {universe_size}")
        self.universe_size = int(universe_size)
        self._lock = threading.Lock()
        self._weights: Dict[SampleKey, float] = {}
        if weights:
            self.commit(weights)

    @property
    def default_weight(self) -> float:
        return 1.0 / self.universe_size

    def __len__(self) -> int:
        return len(self._weights)

    def __contains__(self, key: SampleKey) -> bool:
        return key in self._weights

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, WeightTable)
            and self.universe_size == other.universe_size
            and self._weights == other._weights
        )

    def weight(self, key: SampleKey) -> float:
        return self._weights.get(key, self.default_weight)

    def items(self):
        return list(self._weights.items())

    def snapshot(self) -> WeightSnapshot:
        with self._lock:
            return WeightSnapshot(dict(self._weights), self.universe_size)

    def commit(self, updates: Mapping[SampleKey, float]) -> None:
        """Apply all updates at once; rejects the whole set if any weight is not positive."""
        bad = [(k, w) for k, w in updates.items() if not (w > 0 and math.isfinite(w))]
        if bad:
            raise ContractError(f"weights must be positive and finite, got {bad[:3]}")
        with self._lock:
            merged = dict(self._weights)
            merged.update((k, float(w)) for k, w in updates.items())
            self._weights = merged

    def heaviest(self, n: int) -> List[Tuple[SampleKey, float]]:
        return sorted(self._weights.items(), key=lambda kv: (-kv[1], kv[0]))[:n]

    # -- serialization ----------------------------------------------------
    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write(f"{TABLE_HEADER}\t{self.universe_size}\n")
        for key in sorted(self._weights):
            buf.write(f"{key.query_id}\t{key.target_id}\t{self._weights[key]!r}\n")
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "WeightTable":
        lines = text.splitlines()
        if not lines:
            raise DataError("line 1: empty weight table (missing header)")
        head = lines[0].split("\t")
        if len(head) != 2 or head[0] != TABLE_HEADER:
            raise DataError(f"line 1: expected '{TABLE_HEADER}<TAB><int>' header, got {lines[0]!r}")
        try:
            universe = int(head[1])
        except ValueError:
            raise DataError(f"line 1: universe size {head[1]!r} is not an integer") from None
        weights = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
            try:
                w = float(parts[2])
                key = SampleKey(parts[0], parts[1])
            except (ValueError, ContractError) as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            if not (w > 0 and math.isfinite(w)):
                raise DataError(f"line {lineno}: weight must be positive, got {parts[2]!r}")
            weights[key] = w
        try:
            return cls(universe, weights)
        except ContractError as exc:
            raise DataError(f"line 1: {exc}") from None

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "WeightTable":
        return cls.loads(Path(path).read_text())


@dataclass(frozen=True)
class BoostConfig:
    rounds: int = 10
    epochs_per_round: int = 3
    round_set_size: int = 256
    mini_batch: int = 32
    delta: float = 2.0
    epsilon_clamp: float = 1e-6

    def __post_init__(self):
        if self.rounds < 0 or self.epochs_per_round < 1 or self.mini_batch < 1:
            raise ConfigurationError(f"invalid boosting schedule: {self}")
        if self.round_set_size < 2 or self.round_set_size % 2:
            raise ConfigurationError(f"round_set_size must be a positive even number, got {self.round_set_size}")
        if self.mini_batch > self.round_set_size:
            raise ConfigurationError("mini_batch cannot exceed round_set_size")
        if self.delta <= 0 or not 0 < self.epsilon_clamp < 0.5:
            raise ConfigurationError(f"invalid delta / epsilon_clamp: {self.delta}, {self.epsilon_clamp}")


@dataclass
class RoundReport:
    round: int
    epsilon: float
    beta: float
    raw_error: float
    epoch_losses: List[float] = field(default_factory=list)
    reweighted: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class Learner(Protocol):
    def train(self, keys: Sequence[SampleKey], labels: np.ndarray, epochs: int, mini_batch: int,
              rng: np.random.Generator) -> List[float]: ...

    def predict(self, keys: Sequence[SampleKey]) -> np.ndarray: ...


class BatchSource(Protocol):
    def next_batch(self): ...


def normalize_weights(weights: Iterable[float]) -> np.ndarray:
    w = np.asarray(list(weights), dtype=np.float64)
    if w.size == 0:
        raise ContractError("cannot normalize an empty weight list")
    if not np.all(w > 0):
        raise ContractError("weights must all be positive")
    return w / math.fsum(w)


def weighted_error(predictions, labels, normalized_weights, epsilon_clamp: float = 1e-6) -> float:
    """Weighted misclassification rate, clamped into [clamp, 1 - clamp]."""
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    w = np.asarray(normalized_weights, dtype=np.float64)
    if not (pred.shape == lab.shape == w.shape):
        raise ContractError(f"length mismatch: {pred.shape}, {lab.shape}, {w.shape}")
    raw = math.fsum(w[pred != lab])
    return min(max(raw, epsilon_clamp), 1.0 - epsilon_clamp)


def beta(epsilon: float) -> float:
    if not 0.0 < epsilon < 1.0:
        raise ContractError(f"epsilon must lie in (0, 1), got {epsilon}")
    return (1.0 - epsilon) / epsilon


def run_round(
    loader: BatchSource,
    table: WeightTable,
    learner: Learner,
    config: BoostConfig,
    round_index: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> RoundReport:
    """Fetch, train, measure weighted error and reweight misclassified pairs.

    The table is written exactly once, after every other step succeeded.
    """
    batch = loader.next_batch()
    keys = list(batch.keys)
    signed = np.where(np.asarray(batch.labels) == 1, 1, -1)
    stored = np.array([table.weight(k) for k in keys], dtype=np.float64)
    normalized = normalize_weights(stored)

    if rng is None:
        rng = np.random.default_rng(round_index)
    losses = learner.train(keys, np.asarray(batch.labels), config.epochs_per_round, config.mini_batch, rng)
    predictions = np.asarray(learner.predict(keys))

    wrong = predictions != signed
    raw = math.fsum(normalized[wrong])
    eps = weighted_error(predictions, signed, normalized, config.epsilon_clamp)
    b = beta(eps)
    if eps >= 0.5:
        logger.warning("round %d: weighted error %.4f >= 0.5, misclassified weights shrink (beta=%.4f)", round_index, eps, b)

    updated = np.where(wrong, stored * b, stored)
    table.commit(dict(zip(keys, updated.tolist())))
    return RoundReport(
        round=round_index,
        epsilon=eps,
        beta=b,
        raw_error=raw,
        epoch_losses=[float(x) for x in losses],
        reweighted=int(wrong.sum()),
    )
