"""Class-balanced, hardness-biased sampling of training pairs.

Random query/target pairings are overwhelmingly negative. Each candidate is
kept with a class-specific acceptance probability so both classes survive at
the same expected rate; among survivors the heaviest pairs (top ``mu``
fraction per class by boosting weight) enter the round set.
"""

from __future__ import annotations

import math
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .boosting import SampleKey, WeightSnapshot, WeightTable
from .errors import ConfigurationError, ContractError, DataError, ExhaustionError


@dataclass
class DatasetIndex:
    query_ids: Tuple[str, ...]
    target_ids: Tuple[str, ...]
    positives: Dict[str, FrozenSet[str]]

    def __post_init__(self):
        self.query_ids = tuple(self.query_ids)
        self.target_ids = tuple(self.target_ids)
        self.positives = {q: frozenset(ts) for q, ts in self.positives.items()}
        if not self.query_ids or not self.target_ids:
            raise DataError("index needs at least one query and one target")
        if len(set(self.query_ids)) != len(self.query_ids) or len(set(self.target_ids)) != len(self.target_ids):
            raise DataError("duplicate ids in index")
        targets = set(self.target_ids)
        for q in self.query_ids:
            pos = self.positives.get(q, frozenset())
            if not pos:
                raise DataError(f"query {q!r} has no positive target")
            unknown = pos - targets
            if unknown:
                raise DataError(f"query {q!r} lists unknown targets {sorted(unknown)[:3]}")
            if q in pos:
                raise DataError(f"query {q!r} lists itself as a positive")

    @property
    def universe_size(self) -> int:
        return len(self.query_ids) * len(self.target_ids)

    @property
    def positive_count(self) -> int:
        return sum(len(self.positives[q]) for q in self.query_ids)

    @property
    def self_pair_count(self) -> int:
        return len(set(self.query_ids) & set(self.target_ids))

    @property
    def negative_count(self) -> int:
        return self.universe_size - self.positive_count - self.self_pair_count

    @property
    def alpha(self) -> float:
        """Average number of positive targets per query."""
        return self.positive_count / len(self.query_ids)

    def label(self, query_id: str, target_id: str) -> int:
        return int(target_id in self.positives[query_id])


@dataclass(frozen=True)
class LoaderConfig:
    m: int = 256
    k: Optional[int] = None
    mu: float = 0.2
    seed: int = 0
    max_attempts: int = 20_000
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.m < 2 or self.m % 2:
            raise ConfigurationError(f"m must be a positive even number, got {self.m}")
        if not 0.0 < self.mu <= 1.0:
            raise ConfigurationError(f"mu must lie in (0, 1], got {self.mu}")
        if self.k is not None and self.k < 2.0 / self.mu:
            raise ConfigurationError(f"k={self.k} is below the minimum 2/mu = {2.0 / self.mu:g}")

    @property
    def candidates(self) -> int:
        return self.k if self.k is not None else 16 * self.m


@dataclass
class Batch:
    keys: List[SampleKey]
    labels: List[int]
    weights: Dict[SampleKey, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def positives(self) -> int:
        return sum(self.labels)

    def to_records(self) -> List[list]:
        return [[k.query_id, k.target_id, int(y)] for k, y in zip(self.keys, self.labels)]

    @classmethod
    def from_records(cls, records: Sequence[Sequence], weights: Optional[Mapping] = None) -> "Batch":
        keys = [SampleKey(q, t) for q, t, _ in records]
        return cls(keys, [int(y) for _, _, y in records], dict(weights or {}))


def class_probabilities(alpha: float, target_count: int) -> Tuple[float, float]:
    """Acceptance probabilities (P+, P-) = (1 - alpha/|T|, alpha/|T|)."""
    if target_count < 1:
        raise ContractError(f"target_count must be positive, got {target_count}")
    if not 1.0 <= alpha <= target_count:
        raise ContractError(f"alpha must lie in [1, |T|={target_count}], got {alpha}")
    ratio = alpha / target_count
    return 1.0 - ratio, ratio


def sample_candidates(
    index: DatasetIndex,
    k: int,
    rng: np.random.Generator,
    acceptance: Optional[Tuple[float, float]] = None,
) -> List[Tuple[SampleKey, int]]:
    """Pair k random queries with k random targets, then rejection-balance the classes.

    Self pairs (an id drawn in both slots) are dropped before acceptance.
    """
    nq, nt = len(index.query_ids), len(index.target_ids)
    if k < 1 or k > nq or k > nt:
        raise ContractError(f"k={k} must lie in [1, min(|Q|={nq}, |T|={nt})]")
    p_plus, p_minus = acceptance or class_probabilities(index.alpha, nt)
    qi = rng.choice(nq, size=k, replace=False)
    ti = rng.choice(nt, size=k, replace=False)
    accept = rng.random(k)
    kept = []
    for q, t, u in zip(qi, ti, accept):
        qid, tid = index.query_ids[q], index.target_ids[t]
        if qid == tid:
            continue
        label = index.label(qid, tid)
        if u < (p_plus if label else p_minus):
            kept.append((SampleKey(qid, tid), label))
    return kept


def _candidate_pool(index, k, block, rng, acceptance) -> List[Tuple[SampleKey, int]]:
    """k candidate pairings drawn as consecutive without-replacement blocks, deduplicated."""
    pool: Dict[SampleKey, int] = {}
    remaining = k
    while remaining > 0:
        size = min(block, remaining)
        pool.update(sample_candidates(index, size, rng, acceptance))
        remaining -= size
    return list(pool.items())


def _weight_lookup(weights: Union[WeightTable, WeightSnapshot, Mapping, None], universe: int):
    if weights is None:
        default = 1.0 / universe
        return lambda key: default
    if isinstance(weights, (WeightTable, WeightSnapshot)):
        return weights.weight
    default = 1.0 / universe
    return lambda key: weights.get(key, default)


def fetch(
    index: DatasetIndex,
    weights: Union[WeightTable, WeightSnapshot, Mapping, None],
    config: LoaderConfig,
    rng: np.random.Generator,
) -> Batch:
    """Assemble m distinct pairs, m/2 per class, favouring heavy pairs."""
    half = config.m // 2
    if index.positive_count < half or index.negative_count < half:
        raise ExhaustionError(
            f"index has {index.positive_count} positive / {index.negative_count} negative pairs, "
            f"cannot fill {half} distinct pairs per class"
        )
    if isinstance(weights, WeightTable):
        weights = weights.snapshot()
    lookup = _weight_lookup(weights, index.universe_size)
    block = min(len(index.query_ids), len(index.target_ids))
    alpha = config.alpha if config.alpha is not None else index.alpha
    acceptance = class_probabilities(alpha, len(index.target_ids))

    chosen: Dict[SampleKey, int] = {}
    counts = [0, 0]
    for _ in range(config.max_attempts):
        candidates = _candidate_pool(index, config.candidates, block, rng, acceptance)
        for label in (1, 0):
            if counts[label] >= half:
                continue
            group = [key for key, y in candidates if y == label and key not in chosen]
            if not group:
                continue
            w = np.array([lookup(key) for key in group])
            top = math.ceil(config.mu * len(group))
            # heaviest first, random order among equal weights
            order = np.lexsort((rng.random(len(group)), -w))[:top]
            for i in order:
                if counts[label] >= half:
                    break
                chosen[group[i]] = label
                counts[label] += 1
        if counts[0] == half and counts[1] == half:
            break
    else:
        raise ExhaustionError(
            f"gave up after {config.max_attempts} candidate draws with {counts[1]}/{half} positives "
            f"and {counts[0]}/{half} negatives"
        )
    keys = list(chosen)
    return Batch(keys, [chosen[k] for k in keys], {k: lookup(k) for k in keys})


_PREFETCH_POOL: Optional[ThreadPoolExecutor] = None


def _pool() -> ThreadPoolExecutor:
    global _PREFETCH_POOL
    if _PREFETCH_POOL is None:
        _PREFETCH_POOL = ThreadPoolExecutor(max_workers=1, thread_name_prefix="prefetch")
    return _PREFETCH_POOL


def prefetch_next(
    index: DatasetIndex,
    table: Union[WeightTable, WeightSnapshot],
    config: LoaderConfig,
    rng: np.random.Generator,
) -> "Future[Batch]":
    """Start ``fetch`` on the loader worker against a snapshot taken now."""
    snapshot = table.snapshot() if isinstance(table, WeightTable) else table
    return _pool().submit(fetch, index, snapshot, config, rng)


class BalancedLoader:
    """Per-round batch source with one batch prefetched in the background.

    The batch for round r+1 is drawn from the table snapshot taken when round r
    starts, with an rng derived from (seed, r+1). Prefetching on or off yields
    the same batches.
    """

    def __init__(
        self,
        index: DatasetIndex,
        table: WeightTable,
        config: LoaderConfig,
        next_round: int = 1,
        pending: Optional[Batch] = None,
        prefetch: bool = True,
    ):
        self.index = index
        self.table = table
        self.config = config
        self.prefetch = prefetch
        self.next_round = next_round
        self._pending: Optional[Union[Batch, Future]] = pending
        self._deferred_snapshot: Optional[WeightSnapshot] = None

    def rng_for(self, round_index: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, 1, round_index])

    def next_batch(self) -> Batch:
        r = self.next_round
        if self._pending is not None:
            batch = self._resolve(self._pending)
        elif self._deferred_snapshot is not None:
            batch = fetch(self.index, self._deferred_snapshot, self.config, self.rng_for(r))
        else:
            batch = fetch(self.index, self.table.snapshot(), self.config, self.rng_for(r))
        self._pending = None
        self._deferred_snapshot = None
        self.next_round = r + 1
        snapshot = self.table.snapshot()
        if self.prefetch:
            self._pending = prefetch_next(self.index, snapshot, self.config, self.rng_for(r + 1))
        else:
            self._deferred_snapshot = snapshot
        return batch

    def pending_batch(self) -> Optional[Batch]:
        """The batch queued for the next round (waits for an in-flight prefetch)."""
        if self._pending is None and self._deferred_snapshot is not None:
            self._pending = fetch(self.index, self._deferred_snapshot, self.config, self.rng_for(self.next_round))
            self._deferred_snapshot = None
        if self._pending is None:
            return None
        self._pending = self._resolve(self._pending)
        return self._pending

    @staticmethod
    def _resolve(item: Union[Batch, Future]) -> Batch:
        return item.result() if isinstance(item, Future) else item
