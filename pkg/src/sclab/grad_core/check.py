"""Central finite-difference checks for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[..., float], arrays: Sequence[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar ``fn(*arrays)`` with respect to every element of every array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(*arrays)
            flat[i] = orig - h
            down = fn(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradcheck(op: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5,
              weights: np.ndarray | None = None, seed: int = 0) -> float:
    """Largest elementwise relative error between backward() and finite differences.

    The scalar probed is ``sum(op(*inputs) * weights)`` with fixed random ``weights`` so every
    output element contributes with a distinct coefficient.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    inputs = [Tensor(a, True) for a in arrays]
    out = op(*inputs)
    if weights is None:
        weights = np.random.default_rng(seed).uniform(0.5, 1.5, out.shape)
    (out * weights).sum().backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    def scalar(*arrs):
        return float(np.sum(op(*[Tensor(a) for a in arrs]).data * weights))

    numeric = numerical_grad(scalar, arrays, h)
    return max(float(relative_error(a, n).max(initial=0.0)) for a, n in zip(analytic, numeric))
