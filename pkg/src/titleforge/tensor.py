"""Reverse-mode autodiff over dense numpy arrays.

Just enough machinery for a small encoder-decoder model: matmul,
elementwise ops, softmax, layer norm, embedding lookup, dropout and a
padding-aware cross-entropy. Data is float32 by default; float64 is
accepted so tests can run high-precision mirrors of the same graph.

Ops record onto a module-level tape whenever gradients are enabled and at
least one input requires them. ``backward`` walks the tape in reverse
execution order, which is a valid topological order by construction.
Gradients accumulate additively across backward calls; callers reset them
between optimizer steps.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import (
    EmptyTargetError,
    NotScalarError,
    ShapeMismatchError,
    TapeClosedError,
    TargetOutOfRangeError,
)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_node", "_tape_epoch")

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._node = None
        self._tape_epoch = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out, parents, backward_fn):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Execution-ordered record of differentiable ops for reverse traversal."""

    def __init__(self):
        self._nodes = []
        self.epoch = 0

    def record(self, node):
        self._nodes.append(node)

    def reset(self):
        """Drop the recorded graph and invalidate values produced on it."""
        self._nodes.clear()
        self.epoch += 1

    def __len__(self):
        return len(self._nodes)


_TAPE = Tape()

# Grad recording is per-thread so concurrent no_grad inference (e.g. the
# HTTP service's worker threads) cannot clobber a training thread's state.
_LOCAL = threading.local()


def _grad_enabled():
    return getattr(_LOCAL, "grad_enabled", True)


def active_tape():
    return _TAPE


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (forward-only inference)."""
    prev = _grad_enabled()
    _LOCAL.grad_enabled = False
    try:
        yield
    finally:
        _LOCAL.grad_enabled = prev


def _record(out, parents, backward_fn):
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        node = _Node(out, parents, backward_fn)
        out._node = node
        out._tape_epoch = _TAPE.epoch
        _TAPE.record(node)
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad = t.grad + np.asarray(g, dtype=t.data.dtype)


def backward(loss):
    """Populate grads of every requires_grad tensor reachable from ``loss``."""
    if loss.data.ndim != 0:
        raise NotScalarError(f"backward needs a scalar, got shape {loss.data.shape}")
    if loss._tape_epoch is not None and loss._tape_epoch != _TAPE.epoch:
        raise TapeClosedError("loss was produced before the tape was last reset")
    _accum(loss, np.ones((), dtype=loss.data.dtype))
    if loss._node is None:
        return
    # Mark the subgraph under the loss; the tape may hold unrelated ops.
    reachable = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        node = t._node
        if node is not None and id(node) not in reachable:
            reachable.add(id(node))
            stack.extend(node.parents)
    for node in reversed(_TAPE._nodes):
        if id(node) in reachable and node.out.grad is not None:
            node.backward_fn(node.out.grad)


def constant(data, dtype=np.float32):
    return Tensor(data, requires_grad=False, dtype=dtype)


def _check_same_dtype(a, b):
    if a.data.dtype != b.data.dtype:
        raise ShapeMismatchError(f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")


def matmul(a, b):
    """Matrix product over the last two axes.

    Supports equal leading (batch) dims, or a 2-D right operand shared
    across the batch (the weight-matrix case).
    """
    _check_same_dtype(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatchError("matmul operands must be at least 2-D")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatchError(f"inner dims disagree: {a.data.shape} x {b.data.shape}")
    if b.data.ndim != 2 and a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeMismatchError(f"leading dims disagree: {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data, dtype=a.data.dtype)

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                k = a.data.shape[-1]
                n = g.shape[-1]
                _accum(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _record(out, (a, b), backward_fn)


def add(a, b):
    """Elementwise sum; ``b`` may broadcast over leading axes of ``a``."""
    _check_same_dtype(a, b)
    if b.data.ndim > a.data.ndim:
        a, b = b, a
    lead = a.data.ndim - b.data.ndim
    if b.data.shape != a.data.shape[lead:]:
        raise ShapeMismatchError(f"cannot add {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data + b.data, dtype=a.data.dtype)

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, g.sum(axis=tuple(range(lead))) if lead else g)

    return _record(out, (a, b), backward_fn)


def mul(a, b):
    """Elementwise product with a same-shape tensor or a python scalar."""
    if isinstance(b, (int, float)):
        c = a.data.dtype.type(b)
        out = Tensor(a.data * c, dtype=a.data.dtype)

        def backward_scalar(g):
            _accum(a, g * c)

        return _record(out, (a,), backward_scalar)
    _check_same_dtype(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"cannot multiply {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data * b.data, dtype=a.data.dtype)

    def backward_fn(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _record(out, (a, b), backward_fn)


def relu(x):
    out = Tensor(np.maximum(x.data, 0), dtype=x.data.dtype)

    def backward_fn(g):
        _accum(x, g * (x.data > 0))

    return _record(out, (x,), backward_fn)


def softmax(x, axis=-1):
    """Numerically stable softmax along ``axis`` (max subtraction)."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, dtype=x.data.dtype)

    def backward_fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(x, (g - dot) * y)

    return _record(out, (x,), backward_fn)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeMismatchError("gamma/beta must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data, dtype=x.data.dtype)

    def backward_fn(g):
        lead = tuple(range(g.ndim - 1))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=lead))
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=lead))
        if x.requires_grad:
            dxhat = g * gamma.data
            term1 = dxhat.mean(axis=-1, keepdims=True)
            term2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (dxhat - term1 - xhat * term2))

    return _record(out, (x, gamma, beta), backward_fn)


def embedding(table, ids):
    """Row gather: out[..., :] = table[ids[...], :]."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(f"embedding id out of range for table of {table.data.shape[0]} rows")
    out = Tensor(table.data[idx], dtype=table.data.dtype)

    def backward_fn(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
            _accum(table, gt)

    return _record(out, (table,), backward_fn)


def dropout(x, rate, training, rng=None):
    """Inverted dropout: kept elements scale by 1/(1-rate); eval is identity."""
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    scale = x.data.dtype.type(1.0 / (1.0 - rate))
    out = Tensor(x.data * keep * scale, dtype=x.data.dtype)

    def backward_fn(g):
        _accum(x, g * keep * scale)

    return _record(out, (x,), backward_fn)


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape), dtype=x.data.dtype)

    def backward_fn(g):
        _accum(x, g.reshape(x.data.shape))

    return _record(out, (x,), backward_fn)


def transpose(x, axes):
    inverse = np.argsort(axes)
    out = Tensor(x.data.transpose(axes), dtype=x.data.dtype)

    def backward_fn(g):
        _accum(x, g.transpose(inverse))

    return _record(out, (x,), backward_fn)


def sum_all(x):
    out = Tensor(x.data.sum(), dtype=x.data.dtype)

    def backward_fn(g):
        _accum(x, np.full_like(x.data, g))

    return _record(out, (x,), backward_fn)


def cross_entropy(logits, targets, pad_id):
    """Mean negative log-likelihood over non-pad target positions.

    ``logits`` is [N, V] or [B, T, V]; ``targets`` the matching id array.
    Positions whose target equals ``pad_id`` are excluded from the mean.
    """
    t = np.asarray(targets, dtype=np.int64)
    v = logits.data.shape[-1]
    flat_logits = logits.data.reshape(-1, v)
    flat_t = t.reshape(-1)
    if flat_t.shape[0] != flat_logits.shape[0]:
        raise ShapeMismatchError(
            f"targets {t.shape} do not match logits {logits.data.shape}"
        )
    nonpad = flat_t != pad_id
    n = int(nonpad.sum())
    if n == 0:
        raise EmptyTargetError("every target position is padding")
    real = flat_t[nonpad]
    if real.min() < 0 or real.max() >= v:
        raise TargetOutOfRangeError(f"target id outside [0, {v})")

    m = flat_logits.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(flat_logits - m).sum(axis=-1, keepdims=True))
    logp = flat_logits - lse
    rows = np.nonzero(nonpad)[0]
    loss = -logp[rows, real].sum() / n
    out = Tensor(np.asarray(loss, dtype=logits.data.dtype), dtype=logits.data.dtype)

    def backward_fn(g):
        if logits.requires_grad:
            d = np.exp(logp)
            d[rows, real] -= 1.0
            d[~nonpad] = 0.0
            d *= g / n
            _accum(logits, d.reshape(logits.data.shape))

    return _record(out, (logits,), backward_fn)
