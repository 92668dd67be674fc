"""Reverse-mode automatic differentiation over numpy arrays.

Small define-by-run engine, float32 by default. Ops build a graph as they
run; backward() walks it in reverse topological order and accumulates
gradients into requires_grad leaves. The op set is closed: what the fusion
and backbone modules need, nothing more.

Every forward output and backward contribution is checked for NaN/Inf and
raises NumericsError on the first non-finite value, naming the op.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class NumericsError(ArithmeticError):
    """A forward or backward pass produced NaN or Inf."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Array node in the autodiff graph.

    grad is allocated (zeros) at construction for requires_grad leaves, so
    a leaf that never appears in a backward pass reports a zero gradient
    rather than None.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, name=None, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = self.name or self._op
        return f"Tensor({tag}, shape={self.data.shape}, grad={self.requires_grad})"

    # convenience operators used throughout the model code
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _check_finite(arr, op, phase="forward"):
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{op}: non-finite values in {phase} output")


def _node(data, parents, backward, op):
    """Wrap an op result; records the graph only when grads are live."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out._op = op
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out.grad = None
    if needs:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def backward(loss):
    """Accumulate d(loss)/d(leaf) into .grad of every reachable leaf.

    loss must be scalar. Deterministic: the traversal order depends only on
    graph structure, so repeated runs produce bit-identical gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        # constant loss: every leaf gradient is zero, nothing to do
        return

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            if g is not None and node.grad is not None:
                node.grad += g.astype(node.grad.dtype, copy=False)
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            _check_finite(pg, node._op, "backward")
            if parent._backward is None and parent.grad is not None:
                parent.grad += pg.astype(parent.grad.dtype, copy=False)
            else:
                acc = grads.get(id(parent))
                if acc is None:
                    # copy: an op may hand the same buffer to two parents
                    grads[id(parent)] = np.array(pg)
                else:
                    acc += pg


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- basic ops

def add(a, b):
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(data, (a, b), bwd, "add")


def sub(a, b):
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from None

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(data, (a, b), bwd, "sub")


def mul(a, b):
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), bwd, "mul")


def matmul(a, b):
    """a @ b. Supports 2-D weights on the right of N-D inputs, and stacked
    operands with identical leading dims (the attention case)."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ: {a.shape} vs {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: leading dims differ: {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        if b.ndim == 2:
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _node(data, (a, b), bwd, "matmul")


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, tuple(tensors), bwd, "concat")


def reshape(a, shape):
    a = _lift(a)
    data = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _node(data, (a,), bwd, "reshape")


def transpose(a, axes=None):
    a = _lift(a)
    data = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return _node(data, (a,), bwd, "transpose")


def index_axis(a, axis, i):
    """Select one index along an axis (e.g. a single feature layer)."""
    a = _lift(a)
    if not 0 <= i < a.shape[axis]:
        raise ShapeError(f"index_axis: index {i} out of range for axis {axis} of {a.shape}")
    key = [slice(None)] * a.ndim
    key[axis] = i
    key = tuple(key)
    data = a.data[key]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _node(data, (a,), bwd, "index_axis")


def sum_(a, axis=None, keepdims=False):
    a = _lift(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    data = np.asarray(data, dtype=a.data.dtype)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, a.data.shape).copy(),)

    return _node(data, (a,), bwd, "sum")


def mean(a, axis=None, keepdims=False):
    a = _lift(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    out = sum_(a, axis=axis, keepdims=keepdims)
    return mul(out, np.asarray(1.0 / n, dtype=a.data.dtype))


# ----------------------------------------------------------- nonlinearities

def sigmoid(a):
    a = _lift(a)
    x = a.data
    # exp only of non-positive values, so neither branch can overflow
    z = np.exp(-np.abs(x))
    data = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)

    def bwd(g):
        return (g * data * (1.0 - data),)

    return _node(data, (a,), bwd, "sigmoid")


def relu(a):
    a = _lift(a)
    data = np.maximum(a.data, 0)

    def bwd(g):
        return (g * (a.data > 0),)

    return _node(data, (a,), bwd, "relu")


def softmax(a, axis=-1):
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _node(data, (a,), bwd, "softmax")


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    a, gain, bias = _lift(a), _lift(gain), _lift(bias)
    if gain.shape != a.shape[-1:] or bias.shape != a.shape[-1:]:
        raise ShapeError(
            f"layer_norm: gain/bias {gain.shape}/{bias.shape} must match last dim of {a.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data

    def bwd(g):
        dgain = (g * xhat).reshape(-1, a.shape[-1]).sum(axis=0)
        dbias = g.reshape(-1, a.shape[-1]).sum(axis=0)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        return dx, dgain, dbias

    return _node(data, (a, gain, bias), bwd, "layer_norm")


# -------------------------------------------------------------- lookup ops

def embedding(table, ids):
    """Row gather: out[..., :] = table[ids[...], :]."""
    table = _lift(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("embedding: ids must be integers")
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise ShapeError(
            f"embedding: id out of range [0, {n}): min={ids.min()}, max={ids.max()}")
    data = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        kernels.scatter_add_rows(
            gt, ids.reshape(-1).astype(np.int64),
            g.reshape(-1, table.shape[-1]).astype(table.data.dtype, copy=False))
        return (gt,)

    return _node(data, (table,), bwd, "embedding")


# ---------------------------------------------------------------- fused ops

def attention(q, k, v, mask_bias):
    """Masked scaled dot-product attention over (..., T, head_dim).

    mask_bias is an additive constant array broadcastable to the score
    shape (..., T, T): 0 where attention is allowed, a large negative
    number where it is not.
    """
    q, k, v = _lift(q), _lift(k), _lift(v)
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"attention: q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    hd = q.shape[-1]
    scale = 1.0 / np.sqrt(hd)
    scores = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    scores = scores + np.asarray(mask_bias, dtype=scores.dtype)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    w = e / e.sum(axis=-1, keepdims=True)
    data = w @ v.data

    def bwd(g):
        dv = np.swapaxes(w, -1, -2) @ g
        dw = g @ np.swapaxes(v.data, -1, -2)
        ds = w * (dw - (dw * w).sum(axis=-1, keepdims=True))
        dq = (ds @ k.data) * scale
        dk = (np.swapaxes(ds, -1, -2) @ q.data) * scale
        return dq, dk, dv

    return _node(data, (q, k, v), bwd, "attention")


def cross_entropy(logits, targets, weights=None):
    """Softmax cross-entropy, reduced to a weighted-sum scalar.

    targets are class indices per row. weights default to 1/N (mean over
    rows); pass explicit weights to restrict the loss to a subset of rows.
    """
    logits = _lift(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    n, c = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy: targets shape {targets.shape} != ({n},)")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ShapeError(f"cross_entropy: target class out of range [0, {c})")
    if weights is None:
        weights = np.full(n, 1.0 / n, dtype=logits.data.dtype)
    else:
        weights = np.asarray(weights, dtype=logits.data.dtype)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.data.max(axis=1)
    picked = logits.data[np.arange(n), targets]
    data = np.asarray(((lse - picked) * weights).sum(), dtype=logits.data.dtype)

    def bwd(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), targets] -= 1.0
        return (g * p * weights[:, None],)

    return _node(data, (logits,), bwd, "cross_entropy")


def dropout(a, rate, rng):
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    a = _lift(a)
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=a.data.dtype)
    mask = keep * scale
    data = a.data * mask

    def bwd(g):
        return (g * mask,)

    return _node(data, (a,), bwd, "dropout")


# ------------------------------------------------------------ grad checking

@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    h: float
    passed: bool
    worst_input: int = -1
    worst_coord: int = -1

    def __str__(self):
        status = "ok" if self.passed else "FAIL"
        return (f"gradcheck {status}: max rel err {self.max_rel_error:.3e} "
                f"(tol {self.tol:g}, h {self.h:g})")


def finite_difference_check(fn, inputs, h=1e-3, tol=1e-3):
    """Compare analytic gradients of a scalar-valued graph against central
    differences.

    fn takes no arguments: it must rebuild the graph from the current .data
    of `inputs` on every call (and be deterministic, so no dropout).
    Analytic gradients run in the engine's float32; for the numeric side the
    same graph is re-evaluated with the inputs temporarily promoted to
    float64, so the difference quotient is not drowned by rounding.
    Relative error per coordinate is |a - n| / max(1, |a|, |n|).
    """
    for t in inputs:
        if not t.requires_grad:
            raise ValueError("finite_difference_check: all inputs must require grad")
        t.grad[...] = 0.0

    loss = fn()
    if loss.data.size != 1:
        raise ShapeError("finite_difference_check: fn must return a scalar")
    backward(loss)
    analytic = [t.grad.copy() for t in inputs]

    def eval64():
        with no_grad():
            return float(fn().data)

    report = GradCheckReport(max_rel_error=0.0, tol=tol, h=h, passed=True)
    originals = [t.data for t in inputs]
    try:
        for t, orig in zip(inputs, originals):
            t.data = orig.astype(np.float64)
        for i, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            for j in range(flat.size):
                saved = flat[j]
                flat[j] = saved + h
                fp = eval64()
                flat[j] = saved - h
                fm = eval64()
                flat[j] = saved
                numeric = (fp - fm) / (2.0 * h)
                a = float(analytic[i].reshape(-1)[j])
                rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                if rel > report.max_rel_error:
                    report.max_rel_error = rel
                    report.worst_input = i
                    report.worst_coord = j
    finally:
        for t, orig in zip(inputs, originals):
            t.data = orig
    report.passed = report.max_rel_error <= tol
    return report
