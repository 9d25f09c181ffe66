"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only what the surrogate model needs is provided: affine maps, elementwise
activations, layer normalization, feature concatenation, row gather /
scatter-sum over edges, sparse-matrix products and the RMSE loss.  Shapes
must agree exactly; the only broadcast is adding a bias row.

Usage::

    with Tape() as tape:
        loss = rmse(affine(x, W, b), target)
    tape.backward(loss)
    W.grad  # d loss / d W
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NumericalBlowup, ShapeError

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_leaf")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are rank <= 2, got shape {arr.shape}")
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive applications, replayed backwards."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        if loss.value.size != 1:
            raise ShapeError("backward needs a scalar loss")
        if not loss.requires_grad:
            self.records.clear()
            return
        loss.grad = np.ones_like(loss.value)
        for out, inputs, rule in reversed(self.records):
            g = out.grad
            if g is None:
                continue
            grads = rule(g)
            for t, gi in zip(inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                # never accumulate in place: gradients may alias each other
                t.grad = gi if t.grad is None else t.grad + gi
            if not out._leaf:
                out.grad = None
        self.records.clear()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    tape = _ACTIVE[-1] if _ACTIVE else None
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    out._leaf = False
    if needs:
        tape.records.append((out, inputs, rule))
    return out


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- linear maps

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """x @ W + b with b added to every row."""
    if x.value.ndim != 2 or W.value.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"affine: incompatible shapes {x.shape} @ {W.shape}")
    if b.shape != (W.shape[1],):
        raise ShapeError(f"affine: bias shape {b.shape} != ({W.shape[1]},)")
    xv, Wv = x.value, W.value

    def rule(g):
        return g @ Wv.T, xv.T @ g, g.sum(axis=0)

    return _result(xv @ Wv + b.value, (x, W, b), rule)


def spmm(S: sp.spmatrix, X: Tensor) -> Tensor:
    """Sparse (constant) matrix times dense tensor."""
    if X.value.ndim != 2 or S.shape[1] != X.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {S.shape} @ {X.shape}")
    St = S.T.tocsr()
    return _result(np.asarray(S @ X.value), (X,), lambda g: (np.asarray(St @ g),))


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _result(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _result(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    av, bv = a.value, b.value
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.value * c, (x,), lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a [d] vector to every row of an [n, d] tensor."""
    if x.value.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: {x.shape} + {b.shape}")
    return _result(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=0)))


def mul_row(x: Tensor, w: Tensor) -> Tensor:
    """Multiply every row of an [n, d] tensor by a [d] vector (Hadamard)."""
    if x.value.ndim != 2 or w.shape != (x.shape[1],):
        raise ShapeError(f"mul_row: {x.shape} * {w.shape}")
    xv, wv = x.value, w.value
    return _result(xv * wv, (x, w), lambda g: (g * wv, (g * xv).sum(axis=0)))


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return _result(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    v = x.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if x.value.ndim != 2:
        raise ShapeError("layer_norm expects [n, d]")
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine params must be ({d},)")
    xv = x.value
    mu = xv.mean(axis=1, keepdims=True)
    xc = xv - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    gv = gamma.value

    def rule(g):
        dxhat = g * gv
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _result(xhat * gv + beta.value, (x, gamma, beta), rule)


# ---------------------------------------------------------------- structure

def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = tuple(tensors)
    vals = [t.value for t in tensors]
    try:
        out = np.concatenate(vals, axis=axis)
    except (ValueError, np.exceptions.AxisError) as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def rule(g):
        if axis == 0:
            return tuple(g[bounds[k]:bounds[k + 1]] for k in range(len(vals)))
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(vals)))

    return _result(out, tensors, rule)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    n, d = x.shape

    def rule(g):
        full = np.zeros((n, d))
        full[:, start:stop] = g
        return (full,)

    return _result(x.value[:, start:stop], (x,), rule)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _result(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def total(x: Tensor) -> Tensor:
    """Sum of every entry, as a scalar tensor."""
    shape = x.shape
    return _result(np.asarray(x.value.sum()), (x,), lambda g: (np.full(shape, float(g)),))


_INCIDENCE: OrderedDict = OrderedDict()


def _incidence(index: np.ndarray, n: int) -> sp.csr_matrix:
    """[n, len(index)] 0/1 matrix with a one at (index[e], e); cached."""
    key = (n, index.tobytes())
    hit = _INCIDENCE.get(key)
    if hit is not None:
        _INCIDENCE.move_to_end(key)
        return hit
    m = index.size
    mat = sp.csr_matrix((np.ones(m), (index, np.arange(m))), shape=(n, m))
    _INCIDENCE[key] = mat
    if len(_INCIDENCE) > 256:
        _INCIDENCE.popitem(last=False)
    return mat


def _check_index(index: np.ndarray, n: int, op: str) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError(f"{op}: index must be 1-D")
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"{op}: index out of range for {n} rows")
    return index


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    n = x.shape[0]
    index = _check_index(index, n, "gather_rows")
    return _result(x.value[index], (x,),
                   lambda g: (np.asarray(_incidence(index, n) @ g),))


def scatter_sum(messages: Tensor, targets: np.ndarray, n: int) -> Tensor:
    """Row i of the result is the sum of message rows whose target is i."""
    if messages.value.ndim != 2:
        raise ShapeError("scatter_sum expects [|E|, d] messages")
    targets = _check_index(targets, n, "scatter_sum")
    if targets.size != messages.shape[0]:
        raise ShapeError("scatter_sum: one target per message row required")
    if targets.size == 0:
        return _result(np.zeros((n, messages.shape[1])), (messages,), lambda g: (None,))
    out = np.asarray(_incidence(targets, n) @ messages.value)
    return _result(out, (messages,), lambda g: (g[targets],))


# ---------------------------------------------------------------- loss

def rmse(pred: Tensor, target) -> Tensor:
    """sqrt(mean((pred - target)^2)); gradient is zero where the loss is zero."""
    target = _as_tensor(target)
    _check_same(pred, target, "rmse")
    diff = pred.value - target.value
    n = diff.size
    r = float(np.sqrt((diff * diff).sum() / n))

    def rule(g):
        if r == 0.0:
            return np.zeros_like(diff), np.zeros_like(diff)
        d = g * diff / (n * r)
        return d, -d

    return _result(np.asarray(r), (pred, target), rule)


# ---------------------------------------------------------------- verification

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Largest |analytic - central difference| / max(1, |central difference|)."""
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        out = f()
    if not np.isfinite(out.value).all():
        raise NumericalBlowup("grad_check: non-finite objective")
    tape.backward(out)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.value) if p.grad is None else p.grad
        flat = p.value.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = float(f().value)
            flat[k] = orig - eps
            fm = float(f().value)
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericalBlowup("grad_check: non-finite objective", where=p.name)
            numeric = (fp - fm) / (2 * eps)
            err = abs(analytic.reshape(-1)[k] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
