"""Continual FEN-SDN learner used by the boosting rounds."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Sequence

import numpy as np

from .boosting import SampleKey
from .errors import ConfigurationError, DataError
from .model import MatchModel, predict_label, signed_labels, symmetric_pair_loss
from .tensor_core import adam_step, take


def downsample(image: np.ndarray, size: int) -> np.ndarray:
    """Block-mean reduction of a square image to ``size`` pixels per side."""
    image = np.asarray(image, dtype=np.float64)
    rows, cols = image.shape
    if rows != cols or rows % size:
        raise DataError(f"cannot reduce a {rows}x{cols} image to {size}x{size} by block averaging")
    f = rows // size
    return image.reshape(size, f, size, f).mean(axis=(1, 3))


class ImageStore:
    """Model-ready images keyed by id, shaped (1, S, S) float32."""

    def __init__(self, images: Mapping[str, np.ndarray], size: int):
        self.size = size
        self._images: Dict[str, np.ndarray] = {}
        for key, img in images.items():
            img = np.asarray(img)
            if img.shape != (size, size):
                img = downsample(img, size)
            self._images[key] = img.astype(np.float32)[None]

    def __contains__(self, key: str) -> bool:
        return key in self._images

    def __len__(self) -> int:
        return len(self._images)

    def stack(self, ids: Sequence[str]) -> np.ndarray:
        try:
            return np.stack([self._images[i] for i in ids])
        except KeyError as exc:
            raise DataError(f"no image for id {exc.args[0]!r}") from None


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weight_decay: float = 5e-4
    delta: float = 2.0
    eval_chunk: int = 128

    def __post_init__(self):
        if self.lr <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigurationError(f"invalid optimizer settings: {self}")
        if self.weight_decay < 0 or self.delta <= 0:
            raise ConfigurationError(f"invalid weight_decay / delta: {self}")

    def to_dict(self) -> dict:
        return asdict(self)


def _pair_indices(keys: Sequence[SampleKey]):
    """Unique image ids in first-seen order plus per-pair row indices into them."""
    slot: Dict[str, int] = {}
    qi, ti = [], []
    for k in keys:
        qi.append(slot.setdefault(k.query_id, len(slot)))
        ti.append(slot.setdefault(k.target_id, len(slot)))
    return list(slot), np.array(qi), np.array(ti)


class PairLearner:
    """Trains one MatchModel continually across rounds with Adam."""

    def __init__(self, model: MatchModel, store: ImageStore, config: TrainConfig = TrainConfig()):
        if store.size != model.fen_config.input_size:
            raise ConfigurationError(f"store size {store.size} != model input size {model.fen_config.input_size}")
        self.model = model
        self.store = store
        self.config = config

    def step(self, keys: Sequence[SampleKey], labels01: np.ndarray) -> float:
        """One Adam update on a mini-batch; returns the symmetric squared hinge loss."""
        ids, qi, ti = _pair_indices(keys)
        feats = self.model.features(self.store.stack(ids), train=True)
        s_qt, s_tq = self.model.both_orders(take(feats, qi), take(feats, ti))
        loss = symmetric_pair_loss(s_qt, s_tq, signed_labels(labels01), self.config.delta)
        params = self.model.params
        params.zero_grad()
        loss.backward()
        c = self.config
        adam_step(params, c.lr, c.beta1, c.beta2, weight_decay=c.weight_decay)
        return float(loss.data)

    def train(self, keys, labels, epochs: int, mini_batch: int, rng: np.random.Generator) -> List[float]:
        keys = list(keys)
        labels = np.asarray(labels)
        losses = []
        for _ in range(epochs):
            order = rng.permutation(len(keys))
            total = 0.0
            for start in range(0, len(keys), mini_batch):
                idx = order[start:start + mini_batch]
                if len(idx) < 2:
                    continue
                total += self.step([keys[i] for i in idx], labels[idx]) * len(idx)
            losses.append(total / len(keys))
        return losses

    def features(self, ids: Sequence[str]) -> np.ndarray:
        """Eval-mode features, computed in chunks."""
        chunk = self.config.eval_chunk
        out = [self.model.features(self.store.stack(ids[i:i + chunk])).data for i in range(0, len(ids), chunk)]
        return np.concatenate(out) if out else np.zeros((0, self.model.fen_config.feature_dim), np.float32)

    def scores(self, keys: Sequence[SampleKey]) -> np.ndarray:
        ids, qi, ti = _pair_indices(keys)
        feats = self.features(ids)
        return self.model.score_features(feats[qi], feats[ti])

    def predict(self, keys: Sequence[SampleKey]) -> np.ndarray:
        return predict_label(self.scores(keys))
