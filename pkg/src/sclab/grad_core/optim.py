"""First-order optimizers over named parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    kind: str = "ADAM"
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in ("SGD", "ADAM"):
            raise ValueError(f"optimizer kind must be SGD or ADAM, got {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


def optimizer_step(params: Mapping[str, Tensor], state: OptimizerState) -> OptimizerState:
    """Apply one update in place to every parameter using its ``grad`` buffer."""
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.step_count += 1
    lr = state.learning_rate
    if state.kind == "SGD":
        for p in params.values():
            p.data -= lr * p.grad
        return state

    b1, b2 = state.adam_beta1, state.adam_beta2
    t = state.step_count
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        elif m.shape != p.shape:
            raise ValueError(f"moment buffer for {name!r} has shape {m.shape}, parameter has {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.adam_eps)
    return state


def zero_grad(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
