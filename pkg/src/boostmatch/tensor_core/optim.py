"""Parameter containers, Adam and He initialization."""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError
from .tensor import DEFAULT_DTYPE, Tensor


class ParameterSet:
    """Named trainable tensors plus their Adam moment estimates."""

    def __init__(self, params: Optional[Dict[str, Tensor]] = None):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.first_moment: Dict[str, np.ndarray] = {}
        self.second_moment: Dict[str, np.ndarray] = {}
        self.step = 0
        for name, tensor in (params or {}).items():
            self.add(name, tensor)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        tensor.name = name
        self.params[name] = tensor
        self.first_moment[name] = np.zeros_like(tensor.data)
        self.second_moment[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def count(self) -> int:
        return sum(p.size for p in self.params.values())


def adam_step(
    params: ParameterSet,
    lr: float,
    beta1: float = 0.5,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One bias-corrected Adam update with coupled L2 weight decay.

    The decay term ``weight_decay * p`` is added to the gradient before the
    moment updates. Parameter arrays are replaced, not written in place, so
    earlier snapshots of ``p.data`` stay valid for concurrent readers.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient for parameter(s) {', '.join(missing)}")
    params.step += 1
    t = params.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.data
        m = beta1 * params.first_moment[name] + (1.0 - beta1) * g
        v = beta2 * params.second_moment[name] + (1.0 - beta2) * g * g
        params.first_moment[name] = m.astype(p.dtype, copy=False)
        params.second_moment[name] = v.astype(p.dtype, copy=False)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)


def he_variance(fan_in: int) -> float:
    if fan_in <= 0:
        raise ContractError(f"fan_in must be positive, got {fan_in}")
    return 2.0 / fan_in


def he_init(shape: Sequence[int], fan_in: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> Tensor:
    """Zero-mean normal draw with variance 2 / fan_in."""
    std = np.sqrt(he_variance(fan_in))
    return Tensor(rng.standard_normal(tuple(shape)) * std, requires_grad=True, dtype=dtype)
