"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations are recorded on the active :class:`Tape` only when at least one
input requires a gradient; outside a tape everything runs as plain numpy.

>>> w = Tensor(np.array([2.0]), requires_grad=True)
>>> with Tape() as tape:
...     loss = (w * w).sum()
>>> tape.backward(loss)
>>> w.grad
array([4.])
"""

import math
import threading

import numpy as np
from scipy import sparse

_state = threading.local()


class NumericError(FloatingPointError):
    """A forward value became NaN or infinite."""


def _tape_stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Records op outputs in creation order, which is a topological order."""

    def __init__(self):
        self.records = []
        self.consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def record(self, out, inputs, backward):
        self.records.append((out, inputs, backward))

    def backward(self, loss, params=()):
        """Propagate d(loss) to every leaf with ``requires_grad``; leaf grads accumulate.

        Tensors in ``params`` that the loss does not reach get a zero gradient.
        """
        if self.consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        if loss.data.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")
        self.consumed = True
        grads = {id(loss): np.ones_like(loss.data)}
        if loss.is_leaf and loss.requires_grad:
            loss._accumulate(grads[id(loss)])
        for out, inputs, backward in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t.is_leaf:
                    t._accumulate(gi)
                else:
                    key = id(t)
                    grads[key] = gi if key not in grads else grads[key] + gi
        self.records = []
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.is_leaf = True
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        g = np.broadcast_to(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(data, op):
    s = float(np.sum(data))
    if not math.isfinite(s) and not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by {op}")


def _make(data, inputs, backward, op):
    _check(data, op)
    rg = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=rg)
    out.is_leaf = False
    if rg:
        tape = active_tape()
        if tape is not None:
            tape.record(out, inputs, backward)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), backward, "div")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p):
    p = float(p)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "power")


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a):
    out = np.logaddexp(0.0, a.data)
    return _make(out, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * a.data)),), "softplus")


def _leaky_factor(out, slope):
    # multiplicative derivative; avoids branchy masked writes on random signs
    f = (out > 0).astype(np.float64)
    f *= 1.0 - slope
    f += slope
    return f


def leaky_relu(a, slope=0.2):
    out = a.data * slope
    np.maximum(a.data, out, out=out)

    def backward(g):
        return (g * _leaky_factor(out, slope),)

    return _make(out, (a,), backward, "leaky_relu")


# ---------------------------------------------------------------- linear algebra and shapes


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, W, b=None):
    """``x @ W + b`` over the last axis of ``x``; ``W`` has shape (in, out)."""
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, W.shape[0])
    out = x2 @ W.data
    if b is not None:
        out += b.data

    def backward(g):
        g2 = g.reshape(-1, W.shape[1])
        gx = (g2 @ W.data.T).reshape(x.shape) if x.requires_grad else None
        gW = x2.T @ g2
        return (gx, gW, g2.sum(axis=0)) if b is not None else (gx, gW)

    inputs = (x, W, b) if b is not None else (x, W)
    return _make(out.reshape(lead + (W.shape[1],)), inputs, backward, "linear")


def sum_(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def index(a, idx):
    """Basic or advanced indexing; the backward scatters with accumulation."""
    out = a.data[idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(np.array(out), (a,), backward, "index")


def scatter_matrix(idx, n_rows, weights=None):
    idx = np.asarray(idx).ravel()
    w = np.ones(len(idx)) if weights is None else np.asarray(weights, dtype=float).ravel()
    return sparse.csr_matrix((w, (idx, np.arange(len(idx)))), shape=(n_rows, len(idx)))


def gather(x, idx, scatter=None):
    """Rows of ``x`` at integer indices ``idx`` (any shape); output shape ``idx.shape + x.shape[1:]``.

    ``scatter`` may pass a precomputed ``scatter_matrix(idx, len(x))`` for
    index sets that are reused across steps.
    """
    idx = np.asarray(idx, dtype=np.int64)
    out = x.data[idx]

    def backward(g):
        S = scatter_matrix(idx, x.shape[0]) if scatter is None else scatter
        return ((S @ g.reshape(idx.size, -1)).reshape(x.shape),)

    return _make(out, (x,), backward, "gather")


def spmm(S, x):
    """Product with a constant sparse matrix ``S``."""
    if S.shape[1] != x.shape[0]:
        raise ValueError(f"spmm shape mismatch {S.shape} @ {x.shape}")
    ST = S.T.tocsr()
    return _make(np.asarray(S @ x.data), (x,), lambda g: (np.asarray(ST @ g),), "spmm")


def segment_sum(x, segment_ids, n_segments):
    return spmm(scatter_matrix(segment_ids, n_segments), x)


def segment_mean(x, segment_ids, n_segments):
    segment_ids = np.asarray(segment_ids)
    counts = np.bincount(segment_ids, minlength=n_segments).astype(float)
    w = 1.0 / counts[segment_ids]
    return spmm(scatter_matrix(segment_ids, n_segments, w), x)


def interpolation_matrix(idx, weights, n_source):
    """Sparse (N, n_source) matrix with rows ``weights`` placed at ``idx``."""
    idx = np.asarray(idx)
    rows = np.repeat(np.arange(idx.shape[0]), idx.shape[1])
    return sparse.csr_matrix((np.asarray(weights, float).ravel(), (rows, idx.ravel())),
                             shape=(idx.shape[0], n_source))


def interpolate_3nn(x, idx, weights):
    """Inverse-distance interpolation: row i is ``sum_k weights[i, k] * x[idx[i, k]]``."""
    return spmm(interpolation_matrix(idx, weights, x.shape[0]), x)


def group_max(x, axis=1):
    """Max over one axis; the gradient goes to the first (lowest-index) maximiser."""
    arg = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis)

    def backward(g):
        ga = np.zeros_like(x.data)
        np.put_along_axis(ga, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _make(np.squeeze(out, axis), (x,), backward, "group_max")


def scatter_max(values, segment_ids, n_segments):
    """Per-segment column-wise max of rows of ``values``; empty segments give 0.

    Ties route the gradient to the lowest row index.
    """
    seg = np.asarray(segment_ids, dtype=np.int64)
    m = values.shape[0]
    if seg.shape != (m,):
        raise ValueError("segment_ids must have one entry per row")
    order = np.argsort(seg, kind="stable")
    v = values.data[order].reshape(m, -1)
    s = seg[order]
    present, starts = np.unique(s, return_index=True)
    seg_max = np.maximum.reduceat(v, starts, axis=0)
    pos = np.where(v == seg_max[np.searchsorted(present, s)], np.arange(m)[:, None], m)
    winner = order[np.minimum.reduceat(pos, starts, axis=0)]  # (n_present, C) row ids
    out = np.zeros((n_segments, v.shape[1]))
    out[present] = seg_max
    cols = np.arange(v.shape[1])

    def backward(g):
        ga = np.zeros((m, v.shape[1]))
        ga[winner, cols[None, :]] = g.reshape(n_segments, -1)[present]
        return (ga.reshape(values.shape),)

    return _make(out.reshape((n_segments,) + values.shape[1:]), (values,), backward, "scatter_max")


# ---------------------------------------------------------------- normalisation and losses


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    d = x.shape[-1]

    def backward(g):
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, d)
        return gx, (flat * xhat.reshape(-1, d)).sum(axis=0), flat.sum(axis=0)

    return _make(out, (x, gamma, beta), backward, "layer_norm")


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Normalise the rows of a 2D input per column.

    In training mode the batch statistics are used and the running buffers
    (plain arrays, updated in place) move by ``momentum``; in evaluation mode
    the running buffers are used.
    """
    if x.ndim != 2:
        raise ValueError("batch_norm expects a 2D (rows, channels) input")
    n = x.shape[0]
    if training:
        mu = x.data.sum(axis=0) / n
        xhat = x.data - mu
        var = np.einsum("ij,ij->j", xhat, xhat) / n
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        xhat = x.data - running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv
    out = xhat * gamma.data
    out += beta.data

    def backward(g):
        g_gamma = np.einsum("ij,ij->j", g, xhat)
        g_beta = g.sum(axis=0)
        if not x.requires_grad:
            return None, g_gamma, g_beta
        scale = gamma.data * inv
        if training:
            # d xhat-stats: subtract the mean and the xhat-projection of the upstream gradient
            gx = xhat * (-g_gamma / n)
            gx += g
            gx -= g_beta / n
            gx *= scale
        else:
            gx = g * scale
        return gx, g_gamma, g_beta

    return _make(out, (x, gamma, beta), backward, "batch_norm")


def batch_norm_act(x, gamma, beta, running_mean, running_var, training, slope=0.2, momentum=0.1, eps=1e-5):
    """``leaky_relu(batch_norm(x))`` as one op, saving an intermediate array."""
    y = batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps)
    rec = active_tape()
    out = y.data
    np.maximum(out, out * slope, out=out)  # slope < 1
    if y.requires_grad and rec is not None:
        # replace the batch-norm record by the fused one
        _, inputs, bn_backward = rec.records.pop()
        y_out = Tensor(out, requires_grad=True)
        y_out.is_leaf = False

        def backward(g):
            return bn_backward(g * _leaky_factor(out, slope))

        rec.record(y_out, inputs, backward)
        return y_out
    return y


def mse(pred, target):
    target = as_tensor(target)
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        gp = (2.0 / n) * g * diff
        return gp, -gp

    return _make(np.array(np.mean(diff * diff)), (pred, target), backward, "mse")
