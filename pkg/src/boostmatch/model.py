"""Feature extraction network (FEN), similarity discrimination network (SDN),
order-invariant pair scoring and the squared hinge loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple, Union

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError
from .tensor_core import (
    BatchNormState,
    ParameterSet,
    Tensor,
    batch_norm,
    concat,
    conv2d,
    flatten,
    he_init,
    leaky_relu,
    linear,
    max_pool2,
    tanh_act,
)
from .tensor_core.tensor import DEFAULT_DTYPE


@dataclass(frozen=True)
class FenConfig:
    input_size: int = 64
    conv_layers: int = 5
    base_kernels: int = 16
    feature_dim: int = 256
    in_channels: int = 1
    leaky_slope: float = 0.01

    def __post_init__(self):
        if min(self.input_size, self.conv_layers, self.base_kernels, self.feature_dim, self.in_channels) < 1:
            raise ConfigurationError(f"FEN sizes must be positive: {self}")
        if self.input_size % (2 ** self.conv_layers) or self.input_size // 2 ** self.conv_layers < 2:
            raise ConfigurationError(
                f"input_size {self.input_size} must be divisible by 2^{self.conv_layers} "
                "and leave at least 2x2 after pooling"
            )

    @classmethod
    def paper(cls) -> "FenConfig":
        return cls(input_size=256, conv_layers=7, base_kernels=16, feature_dim=1024)

    def channels(self) -> List[int]:
        """Kernel count per conv layer: base_kernels * 2^(layer-1)."""
        return [self.base_kernels * 2 ** i for i in range(self.conv_layers)]

    @property
    def final_spatial(self) -> int:
        return self.input_size // 2 ** self.conv_layers

    @property
    def flat_dim(self) -> int:
        return self.channels()[-1] * self.final_spatial ** 2


@dataclass(frozen=True)
class SdnConfig:
    hidden_sizes: Tuple[int, ...] = (256, 128, 64)

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ConfigurationError(f"SDN hidden sizes must be positive, got {self.hidden_sizes}")

    @classmethod
    def paper(cls) -> "SdnConfig":
        return cls((1024, 512, 256))

    @classmethod
    def scaled(cls, feature_dim: int) -> "SdnConfig":
        """Keep the 1 : 1/2 : 1/4 width ratios relative to the feature size."""
        return cls((feature_dim, max(feature_dim // 2, 1), max(feature_dim // 4, 1)))


@dataclass
class MatchModel:
    """FEN + SDN parameters, batch-norm buffers and the seed they came from."""

    fen_config: FenConfig = field(default_factory=FenConfig)
    sdn_config: SdnConfig = field(default_factory=SdnConfig)
    seed: int = 0
    dtype: type = DEFAULT_DTYPE

    def __post_init__(self):
        self.params = ParameterSet()
        self.bn_states: List[BatchNormState] = []
        rng = np.random.default_rng([self.seed, 0])
        fc = self.fen_config
        c_in = fc.in_channels
        for i, c_out in enumerate(fc.channels()):
            fan_in = c_in * 9
            self.params.add(f"fen.conv{i}.weight", he_init((c_out, c_in, 3, 3), fan_in, rng, self.dtype))
            self.params.add(f"fen.conv{i}.bias", Tensor(np.zeros(c_out), dtype=self.dtype))
            self.params.add(f"fen.bn{i}.gamma", Tensor(np.ones(c_out), dtype=self.dtype))
            self.params.add(f"fen.bn{i}.beta", Tensor(np.zeros(c_out), dtype=self.dtype))
            self.bn_states.append(BatchNormState.fresh(c_out, dtype=self.dtype))
            c_in = c_out
        self.params.add("fen.fc.weight", he_init((fc.feature_dim, fc.flat_dim), fc.flat_dim, rng, self.dtype))
        self.params.add("fen.fc.bias", Tensor(np.zeros(fc.feature_dim), dtype=self.dtype))

        width = 2 * fc.feature_dim
        sizes = list(self.sdn_config.hidden_sizes) + [1]
        for i, size in enumerate(sizes):
            name = "sdn.head" if i == len(sizes) - 1 else f"sdn.fc{i}"
            self.params.add(f"{name}.weight", he_init((size, width), width, rng, self.dtype))
            self.params.add(f"{name}.bias", Tensor(np.zeros(size), dtype=self.dtype))
            width = size

    # -- forward passes ----------------------------------------------------
    def features(self, images: Union[np.ndarray, Tensor], train: bool = False) -> Tensor:
        """FEN forward on an (N, C, S, S) batch; returns (N, feature_dim) in [-1, 1]."""
        x = images if isinstance(images, Tensor) else Tensor(images, dtype=self.dtype)
        fc = self.fen_config
        expected = (fc.in_channels, fc.input_size, fc.input_size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise DimensionError(f"FEN expects (N, {', '.join(map(str, expected))}) input, got {x.shape}")
        p = self.params
        for i in range(fc.conv_layers):
            x = conv2d(x, p[f"fen.conv{i}.weight"], p[f"fen.conv{i}.bias"], stride=1, padding=1)
            x = batch_norm(x, p[f"fen.bn{i}.gamma"], p[f"fen.bn{i}.beta"], self.bn_states[i], train=train)
            x = max_pool2(leaky_relu(x, fc.leaky_slope))
        return tanh_act(linear(flatten(x), p["fen.fc.weight"], p["fen.fc.bias"]))

    def sdn(self, pair_features: Tensor) -> Tensor:
        """SDN forward on (N, 2*feature_dim) concatenations; returns (N,) raw scores."""
        width = 2 * self.fen_config.feature_dim
        if pair_features.ndim != 2 or pair_features.shape[1] != width:
            raise DimensionError(f"SDN expects (N, {width}) input, got {pair_features.shape}")
        x = pair_features
        hidden = len(self.sdn_config.hidden_sizes)
        for i in range(hidden):
            x = linear(x, self.params[f"sdn.fc{i}.weight"], self.params[f"sdn.fc{i}.bias"])
            if i < hidden - 1:
                x = tanh_act(x)
        x = linear(x, self.params["sdn.head.weight"], self.params["sdn.head.bias"])
        return x.reshape(x.shape[0])

    def both_orders(self, fq: Tensor, ft: Tensor) -> Tuple[Tensor, Tensor]:
        """Scores for f(q)+f(t) and f(t)+f(q), computed in one SDN pass."""
        n = fq.shape[0]
        stacked = concat([concat([fq, ft], axis=1), concat([ft, fq], axis=1)], axis=0)
        scores = self.sdn(stacked)
        pair = scores.reshape(2, n)
        return _row(pair, 0), _row(pair, 1)

    def score_features(self, fq: np.ndarray, ft: np.ndarray) -> np.ndarray:
        """Symmetric pair scores from precomputed feature rows (no graph)."""
        a, b = self.both_orders(Tensor(fq, dtype=self.dtype), Tensor(ft, dtype=self.dtype))
        return (a.data + b.data) / 2

    # -- state -------------------------------------------------------------
    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {name: p.data for name, p in self.params.items()}
        for i, st in enumerate(self.bn_states):
            arrays[f"fen.bn{i}.running_mean"] = st.running_mean
            arrays[f"fen.bn{i}.running_var"] = st.running_var
        return arrays

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise ContractError(f"missing parameter array {name!r}")
            if arrays[name].shape != p.shape:
                raise DimensionError(f"parameter {name!r}: stored shape {arrays[name].shape} != model shape {p.shape}")
            p.data = np.array(arrays[name], dtype=self.dtype)
        for i, st in enumerate(self.bn_states):
            st.running_mean = np.array(arrays[f"fen.bn{i}.running_mean"], dtype=self.dtype)
            st.running_var = np.array(arrays[f"fen.bn{i}.running_var"], dtype=self.dtype)

    def config_dict(self) -> dict:
        return {"fen": asdict(self.fen_config), "sdn": asdict(self.sdn_config), "seed": self.seed}


def _row(x: Tensor, i: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        full[i] = g
        return (full,)

    return Tensor.from_op(x.data[i], (x,), backward)


def _as_batch(image: np.ndarray, config: FenConfig) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[None]
    size = config.input_size
    if arr.ndim != 4 or arr.shape[-2:] != (size, size):
        raise DimensionError(f"image spatial size {arr.shape[-2:]} != configured input size ({size}, {size})")
    return arr


def fen_forward(model: MatchModel, image: np.ndarray, train: bool = False) -> np.ndarray:
    """Feature vector(s) for one HW/CHW image or an NCHW batch."""
    batch = _as_batch(image, model.fen_config)
    feats = model.features(batch, train=train).data
    return feats[0] if np.asarray(image).ndim < 4 else feats


def pair_score(q: np.ndarray, t: np.ndarray, model: MatchModel) -> float:
    """(sdn(f(q)+f(t)) + sdn(f(t)+f(q))) / 2 in eval mode; symmetric in q and t."""
    fq = fen_forward(model, q)[None]
    ft = fen_forward(model, t)[None]
    return float(model.score_features(fq, ft)[0])


# -- losses ----------------------------------------------------------------


def _check_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if not np.all((labels == 1.0) | (labels == -1.0)):
        raise ContractError(f"labels must be +1 or -1, got {np.unique(labels)}")
    return labels


def signed_labels(binary: np.ndarray) -> np.ndarray:
    """Map stored {0, 1} match labels to the {-1, +1} labels the hinge loss uses."""
    binary = np.asarray(binary)
    if not np.all((binary == 0) | (binary == 1)):
        raise ContractError(f"binary labels must be 0 or 1, got {np.unique(binary)}")
    return np.where(binary == 1, 1.0, -1.0)


def hinge_loss(score, label) -> float:
    """Plain hinge max(0, 1 - y*s); reported as a diagnostic only."""
    out = np.maximum(0.0, 1.0 - _check_labels(label) * np.asarray(score, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def squared_hinge_loss(score, label, delta: float = 2.0):
    """(1 / (2*delta)) * max(0, 1 - y*s)^2.

    With a Tensor ``score`` the mean over all entries is returned as a
    differentiable Tensor; with plain numbers the elementwise value.
    """
    if delta <= 0:
        raise ContractError(f"delta must be positive, got {delta}")
    y = _check_labels(label)
    if not isinstance(score, Tensor):
        m = np.maximum(0.0, 1.0 - y * np.asarray(score, dtype=np.float64))
        out = m * m / (2.0 * delta)
        return float(out) if out.ndim == 0 else out

    y = np.broadcast_to(y, score.shape).astype(score.dtype)
    m = np.maximum(0.0, 1.0 - y * score.data)
    n = score.size
    loss = np.asarray((m * m).sum() / (2.0 * delta * n), dtype=score.dtype)

    def backward(g):
        return ((-y * m / (delta * n)) * g,)

    return Tensor.from_op(loss, (score,), backward)


def squared_hinge_grad(score, label, delta: float = 2.0):
    """Analytic d loss / d score = -y * max(0, 1 - y*s) / delta."""
    y = _check_labels(label)
    s = np.asarray(score, dtype=np.float64)
    return -y * np.maximum(0.0, 1.0 - y * s) / delta


def symmetric_pair_loss(s_qt: Tensor, s_tq: Tensor, labels: np.ndarray, delta: float = 2.0) -> Tensor:
    """Average of the squared hinge loss over both concatenation orders."""
    return (squared_hinge_loss(s_qt, labels, delta) + squared_hinge_loss(s_tq, labels, delta)) * 0.5


def predict_label(score):
    """+1 for a positive score, -1 otherwise (a zero score is a non-match)."""
    s = np.asarray(score)
    out = np.where(s > 0, 1, -1)
    return int(out) if out.ndim == 0 else out
