"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation builds a fresh graph node holding a closure that maps the
upstream gradient to gradients for each parent.  ``Tensor.backward`` walks the
graph in reverse topological order and accumulates into leaf ``grad`` buffers.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

EPS = 1e-8

_node_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or infinity."""


class NonFiniteGradientError(FloatingPointError):
    """A NaN or infinity appeared while propagating gradients."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = "leaf"):
        self.data = np.array(data, dtype=np.float64, copy=True) if not _parents else data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)
        self.op = op
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = _backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self, eps: float = EPS):
        return log(self, eps)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    # -- differentiation -----------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` on every leaf reachable from this scalar.

        Leaf gradients accumulate across calls; clear them with ``zero_grad``.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if not _all_finite(pg):
                    raise NonFiniteGradientError(f"non-finite gradient flowing out of '{node.op}'")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _all_finite(a: np.ndarray) -> bool:
    # a NaN or inf anywhere makes the sum non-finite; the exact check only runs then
    return bool(np.isfinite(a.sum())) or bool(np.all(np.isfinite(a)))


def _make(data: np.ndarray, parents: Iterable[Tensor], backward, op: str) -> Tensor:
    if not _all_finite(data):
        raise NonFiniteError(f"operation '{op}' produced a non-finite value")
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=parents, _backward=backward, op=op)
    return _const(data, op)


def _const(data: np.ndarray, op: str) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = False
    t.grad = None
    t.node_id = next(_node_ids)
    t.op = op
    t._parents = ()
    t._backward = None
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# -- elementwise -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b, eps: float = EPS) -> Tensor:
    """Elementwise quotient; denominators smaller than ``eps`` in magnitude are pushed out to ``±eps``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    den = np.where(np.abs(b.data) < eps, np.copysign(eps, b.data), b.data)
    out = a.data / den

    def backward(g):
        ga = _unbroadcast(g / den, a.shape)
        gb = np.where(np.abs(b.data) < eps, 0.0, -g * out / den)
        return ga, _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient 0 at the kink
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a, eps: float = EPS) -> Tensor:
    """Natural log of ``max(a, eps)``; no gradient flows through the clamped region."""
    a = as_tensor(a)
    safe = np.maximum(a.data, eps)
    live = a.data > eps
    return _make(np.log(safe), (a,), lambda g: (np.where(live, g / safe, 0.0),), "log")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def clamp_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    live = a.data > floor
    return _make(np.where(live, a.data, floor), (a,), lambda g: (g * live,), "clamp_min")


_UNARY = {"relu": relu, "exp": exp, "log": log, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch by name: ``add sub mul div`` take two operands, ``relu exp log neg`` one."""
    if op in _BINARY:
        if len(operands) != 2:
            raise TypeError(f"{op} takes 2 operands, got {len(operands)}")
        return _BINARY[op](*operands)
    if op in _UNARY:
        if len(operands) != 1:
            raise TypeError(f"{op} takes 1 operand, got {len(operands)}")
        return _UNARY[op](operands[0])
    raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_BINARY) + sorted(_UNARY)}")


# -- reductions --------------------------------------------------------

def _check_axis(x: Tensor, axis):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in axes:
        if not -x.ndim <= ax < x.ndim:
            raise IndexError(f"axis {ax} out of range for tensor of rank {x.ndim}")
    return tuple(ax % x.ndim for ax in axes)


def _expand_back(g: np.ndarray, shape, axes):
    if axes is not None:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(x, axis=None) -> Tensor:
    x = as_tensor(x)
    axes = _check_axis(x, axis)
    out = np.sum(x.data, axis=axes)
    return _make(np.asarray(out, dtype=np.float64), (x,),
                 lambda g: (np.array(_expand_back(g, x.shape, axes)),), "sum")


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    axes = _check_axis(x, axis)
    count = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    if count == 0:
        raise ShapeError("mean over an empty axis is undefined")
    out = np.mean(x.data, axis=axes)
    return _make(np.asarray(out, dtype=np.float64), (x,),
                 lambda g: (np.array(_expand_back(g, x.shape, axes)) / count,), "mean")


def reduce(op: str, x, axis=None) -> Tensor:
    if op == "sum":
        return sum_(x, axis)
    if op == "mean":
        return mean(x, axis)
    raise ValueError(f"unknown reduction {op!r}; expected 'sum' or 'mean'")


# -- structure ---------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} into {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _make(out, (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = np.array(x.data[index])

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (x,), backward, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


# -- linear algebra ----------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product of ``[..., m, k]`` and ``[k, n]`` (leading batch axes on ``a`` allowed)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


def conv1d(x, w, stride: int = 1) -> Tensor:
    """Valid cross-correlation of ``x`` ``[c_in, L]`` (or ``[B, c_in, L]``) with ``w`` ``[c_out, c_in, k]``."""
    x, w = as_tensor(x), as_tensor(w)
    if stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    if w.ndim != 3:
        raise ShapeError(f"conv1d: weight must be [c_out, c_in, k], got {w.shape}")
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 3 or xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} does not match weight {w.shape}")
    batch, c_in, length = xd.shape
    c_out, _, k = w.shape
    if length < k:
        raise ShapeError(f"conv1d: input too short (length {length} < kernel {k})")
    l_out = (length - k) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xd, k, axis=2)[:, :, ::stride][:, :, :l_out]
    cols = windows.transpose(0, 2, 1, 3).reshape(batch * l_out, c_in * k)
    wmat = w.data.reshape(c_out, c_in * k)
    out = (cols @ wmat.T).reshape(batch, l_out, c_out).transpose(0, 2, 1)
    if unbatched:
        out = out[0]

    def backward(g):
        g3 = g[None] if unbatched else g
        grow = g3.transpose(0, 2, 1).reshape(batch * l_out, c_out)
        gw = (grow.T @ cols).reshape(w.shape)
        gcols = (grow @ wmat).reshape(batch, l_out, c_in, k)
        gxt = np.zeros((batch, length, c_in))
        for j in range(k):
            gxt[:, j: j + stride * (l_out - 1) + 1: stride, :] += gcols[:, :, :, j]
        gx = gxt.transpose(0, 2, 1)
        return (gx[0] if unbatched else gx), gw

    return _make(out, (x, w), backward, "conv1d")


# -- fused numerics ----------------------------------------------------

def cosine_similarity(u, v, eps: float = EPS) -> Tensor:
    """Cosine similarity along the last axis, norms floored at ``eps``."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape:
        raise ShapeError(f"cosine_similarity: shapes differ {u.shape} vs {v.shape}")
    if u.ndim == 0 or u.shape[-1] < 1:
        raise ShapeError("cosine_similarity needs vectors of width >= 1")
    nu = np.linalg.norm(u.data, axis=-1)
    nv = np.linalg.norm(v.data, axis=-1)
    du, dv = np.maximum(nu, eps), np.maximum(nv, eps)
    dot = np.sum(u.data * v.data, axis=-1)
    sim = dot / (du * dv)

    def backward(g):
        ge = g[..., None]
        s = sim[..., None]
        live_u = (nu > eps)[..., None]
        live_v = (nv > eps)[..., None]
        gu = ge * (v.data / (du * dv)[..., None] - np.where(live_u, s * u.data / (du * du)[..., None], 0.0))
        gv = ge * (u.data / (du * dv)[..., None] - np.where(live_v, s * v.data / (dv * dv)[..., None], 0.0))
        return gu, gv

    # rounding can push |sim| a few ulps past 1
    return _make(np.clip(sim, -1.0, 1.0), (u, v), backward, "cosine_similarity")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return _make(out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),), "log_softmax")
