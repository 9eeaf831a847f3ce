"""Reverse-mode automatic differentiation on dense 2-D float64 arrays, plus Adam.

Every value is a 2-D array. Binary elementwise ops accept equal shapes or the
row/column/scalar broadcasts the graph networks need (n x c with 1 x c, n x 1 or 1 x 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

NORM_EPS = 1e-12


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "op", "_consumed")

    def __init__(self, value, requires_grad: bool = False, *, _parents=(), _op: str = "leaf"):
        v = np.array(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(-1, 1)
        elif v.ndim != 2:
            raise ValueError(f"Tensor must be at most 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite values produced by {_op}")
        self.value = v
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self.op = _op
        self._consumed = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(value, requires_grad=needs, _parents=parents if needs else (), _op=op)
    if needs:
        out._backward = backward_fn
    return out


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    shape = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            shape.append(da)
        elif da == 1:
            shape.append(db)
        else:
            raise ValueError(f"{op}: incompatible shapes {a} and {b}")
    return tuple(shape)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# --------------------------------------------------------------------------
# Elementwise binary ops
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    return _result(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    return _result(
        a.value - b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    av, bv = a.value, b.value
    return _result(
        av * bv, (a, b),
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)), "mul",
    )


# --------------------------------------------------------------------------
# Elementwise unary ops
# --------------------------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    return _result(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    pos = x.value > 0
    neg_part = alpha * np.expm1(np.minimum(x.value, 0.0))
    out = np.where(pos, x.value, neg_part)
    deriv = np.where(pos, 1.0, neg_part + alpha)
    return _result(out, (x,), lambda g: (g * deriv,), "elu")


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _stable_sigmoid(x.value)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softplus(x) -> Tensor:
    """log(1 + exp(x)) without overflow."""
    x = as_tensor(x)
    v = x.value
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    s = _stable_sigmoid(v)
    return _result(out, (x,), lambda g: (g * s,), "softplus")


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    v = x.value
    out = v ** p
    return _result(out, (x,), lambda g: (g * p * v ** (p - 1.0),), "power")


_ELEMENTWISE = {
    "relu": relu,
    "elu": elu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "add": add,
    "mul": mul,
    "sub": sub,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# --------------------------------------------------------------------------
# Linear algebra and shape ops
# --------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return _result(av @ bv, (a, b), back, "matmul")


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return _result(x.value.T.copy(), (x,), lambda g: (g.T,), "transpose")


def row_l2_normalize(x, eps: float = NORM_EPS) -> Tensor:
    """Divide each row by max(||row||, eps)."""
    x = as_tensor(x)
    v = x.value
    norms = np.sqrt(np.sum(v * v, axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    y = v / denom
    active = norms > eps

    def back(g):
        proj = np.sum(g * y, axis=1, keepdims=True)
        return (np.where(active, (g - y * proj) / denom, g / denom),)

    return _result(y, (x,), back, "row_l2_normalize")


def pairwise_distance(z) -> Tensor:
    """n x n Euclidean distances between rows; zero distances get a zero subgradient."""
    z = as_tensor(z)
    v = z.value
    diff = v[:, None, :] - v[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(d > 0, (g + g.T) / d, 0.0)
        return (np.einsum("ij,ijk->ik", coef, diff),)

    return _result(d, (z,), back, "pairwise_distance")


# --------------------------------------------------------------------------
# Reductions
# --------------------------------------------------------------------------


def reduce_sum(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _result(np.array([[x.value.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),), "sum")


def reduce_mean(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    n = x.value.size
    return _result(
        np.array([[x.value.mean()]]), (x,), lambda g: (np.full(shape, g[0, 0] / n),), "mean"
    )


def sum_rows(x) -> Tensor:
    """Row sums as an n x 1 column."""
    x = as_tensor(x)
    shape = x.shape
    return _result(
        x.value.sum(axis=1, keepdims=True), (x,), lambda g: (np.broadcast_to(g, shape).copy(),),
        "sum_rows",
    )


def logsumexp_rows(x, mask: np.ndarray | None = None) -> Tensor:
    """Per-row log-sum-exp as an n x 1 column, optionally restricted to `mask` entries.

    Each row of the mask must contain at least one True entry.
    """
    x = as_tensor(x)
    v = x.value
    if mask is None:
        m = np.ones(v.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != v.shape:
            raise ValueError(f"logsumexp_rows: mask shape {m.shape} != {v.shape}")
        if not np.all(m.any(axis=1)):
            raise ValueError("logsumexp_rows: a mask row selects nothing")
    masked = np.where(m, v, -np.inf)
    shift = masked.max(axis=1, keepdims=True)
    e = np.where(m, np.exp(masked - shift), 0.0)
    s = e.sum(axis=1, keepdims=True)
    out = shift + np.log(s)
    weights = e / s
    return _result(out, (x,), lambda g: (g * weights,), "logsumexp_rows")


_REDUCTIONS = {"sum": reduce_sum, "mean": reduce_mean, "logsumexp_rows": logsumexp_rows}


def reduce(op: str, x, **kwargs) -> Tensor:
    try:
        fn = _REDUCTIONS[op]
    except KeyError:
        raise ValueError(f"unknown reduction {op!r}") from None
    return fn(x, **kwargs)


# --------------------------------------------------------------------------
# Backward sweep
# --------------------------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every leaf that requires grad.

    The graph is released afterwards; a second call on the same graph raises.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a 1x1 loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward called twice on the same graph; run the forward pass again")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any parameter")
    order = _topological_order(loss)
    grads = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node._consumed = True
        if g is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> None:
    """One Adam update with bias correction and decoupled weight decay; clears grads."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise RuntimeError(f"adam_step: no gradient for {', '.join(missing)}")
    state.step += 1
    t = state.step
    b1, b2, lr = state.beta1, state.beta2, state.learning_rate
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        if state.weight_decay:
            p.value = p.value - lr * state.weight_decay * p.value
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None


# --------------------------------------------------------------------------
# Parameter sets
# --------------------------------------------------------------------------


def params_to_dict(params: Mapping[str, Tensor]) -> dict[str, list]:
    return {name: p.value.tolist() for name, p in params.items()}


def params_from_dict(data: Mapping[str, Iterable]) -> dict[str, Tensor]:
    return {name: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for name, v in data.items()}


def save_params(params: Mapping[str, Tensor], path: str | Path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params), sort_keys=True))


def load_params(path: str | Path) -> dict[str, Tensor]:
    return params_from_dict(json.loads(Path(path).read_text()))


def clone_params(params: Mapping[str, Tensor]) -> dict[str, Tensor]:
    return {name: Tensor(p.value.copy(), requires_grad=True) for name, p in params.items()}
