"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tape` records every operation whose inputs it is watching.
``Tape.backward`` walks the records once, in exact reverse order, and
returns the gradient of a scalar with respect to every recorded tensor.
Tensors without a tape are constants.

Every op is a module-level function taking and returning :class:`Tensor`.
"""

import numpy as np
import scipy.sparse as sp

from .errors import BadTarget, IndexOutOfRange, NonFiniteError, ShapeMismatch


class Tensor:
    __slots__ = ("data", "tape", "node", "name")

    def __init__(self, data, tape=None, node=-1, name=None):
        self.data = data
        self.tape = tape
        self.node = node
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def requires_grad(self):
        return self.tape is not None

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, tracked={self.requires_grad})"

    def numpy(self):
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)


class Gradients:
    def __init__(self, grads):
        self._grads = grads

    def of(self, t):
        """Gradient for ``t``; zeros when ``t`` did not influence the loss."""
        g = self._grads.get(t.node) if t.tape is not None else None
        return np.zeros_like(t.data) if g is None else g

    def __contains__(self, t):
        return t.tape is not None and t.node in self._grads


class Tape:
    def __init__(self, debug=False):
        self.debug = debug
        self._records = []
        self._num_nodes = 0
        self.last_backward_visits = 0

    def __len__(self):
        return len(self._records)

    def _node(self):
        self._num_nodes += 1
        return self._num_nodes - 1

    def watch(self, data, name=None):
        data = np.asarray(data)
        if self.debug and not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite values in {name or 'input'}")
        return Tensor(data, self, self._node(), name)

    def record(self, data, inputs, backward, op=""):
        if self.debug and not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite output from {op}")
        out = Tensor(data, self, self._node())
        self._records.append((out.node, inputs, backward))
        return out

    def backward(self, loss, seed=None):
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if seed is None:
            if loss.data.size != 1:
                raise ShapeMismatch("backward from a non-scalar needs an explicit seed")
            seed = np.ones_like(loss.data)
        grads = {loss.node: seed}
        visits = 0
        for node, inputs, backward in reversed(self._records):
            visits += 1
            g = grads.get(node)
            if g is None:
                continue
            for t, gi in zip(inputs, backward(g)):
                if gi is None or t.tape is None:
                    continue
                prev = grads.get(t.node)
                grads[t.node] = gi if prev is None else prev + gi
        self.last_backward_visits = visits
        return Gradients(grads)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _op(data, inputs, backward, op):
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("inputs recorded on different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(data)
    return tape.record(data, inputs, backward, op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _op(a.data + b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _op(a.data - b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _op(a.data * b.data, (a, b), backward, "mul")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    return _op(y, (x,), lambda g: (g * y,), "exp")


def log(x):
    x = as_tensor(x)
    return _op(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def dropout(x, p, rng=None, train=True):
    """Inverted dropout: zero with probability ``p``, scale survivors by
    ``1 / (1 - p)``.  Identity in eval mode or when ``p == 0``."""
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _op(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------- linear algebra / shape

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _op(a.data @ b.data, (a, b), backward, "matmul")


def spmm(matrix, x):
    """Constant sparse matrix times tensor; a fused gather + scatter-sum
    when ``matrix`` has one entry per edge."""
    x = as_tensor(x)
    if x.ndim != 2 or matrix.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"spmm: {matrix.shape} @ {x.shape}")
    y = np.asarray(matrix @ x.data)
    return _op(y, (x,), lambda g: (np.asarray(matrix.T @ g),), "spmm")


def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeMismatch("concat of nothing")
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(x.shape[d] != xs[0].shape[d]
                                       for d in range(x.ndim) if d != ax):
            raise ShapeMismatch(f"concat: {[x.shape for x in xs]} along axis {axis}")
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _op(np.concatenate([x.data for x in xs], axis=ax), tuple(xs), backward, "concat")


def concat_last_dim(xs):
    return concat(xs, axis=-1)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape {x.shape} -> {shape}") from None
    return _op(y, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeMismatch(f"transpose expects a matrix, got {x.shape}")
    return _op(x.data.T.copy(), (x,), lambda g: (g.T.copy(),), "transpose")


def sum(x, axis=None):  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    y = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _op(y, (x,), backward, "sum")


def mean(x, axis=None):
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / count)


def _check_index(index, size, op):
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    if len(index) and (index.min() < 0 or index.max() >= size):
        raise IndexOutOfRange(f"{op}: index outside [0, {size})")
    return index


def _scatter_rows(values, index, num_rows):
    """``out[index[k]] += values[k]`` for a 2-D (or 1-D) array."""
    if values.dtype != np.float64:
        out = np.zeros((num_rows,) + values.shape[1:], dtype=values.dtype)
        np.add.at(out, index, values)
        return out
    k = len(index)
    mat = sp.csr_matrix((np.ones(k), (index, np.arange(k))), shape=(num_rows, k))
    width = int(np.prod(values.shape[1:], dtype=np.int64))
    out = mat @ values.reshape(k, width)
    return np.asarray(out).reshape((num_rows,) + values.shape[1:])


def gather(x, index):
    """Rows ``x[index]``."""
    x = as_tensor(x)
    index = _check_index(index, x.shape[0], "gather")
    n = x.shape[0]
    return _op(x.data[index], (x,), lambda g: (_scatter_rows(g, index, n),), "gather")


def scatter_sum(x, index, num_rows):
    """Sum rows of ``x`` into ``num_rows`` buckets: ``out[index[k]] += x[k]``."""
    x = as_tensor(x)
    if len(np.asarray(index).reshape(-1)) != x.shape[0]:
        raise ShapeMismatch(f"scatter_sum: {x.shape[0]} rows, {len(index)} indices")
    index = _check_index(index, num_rows, "scatter_sum")
    return _op(_scatter_rows(x.data, index, num_rows), (x,), lambda g: (g[index],), "scatter_sum")


def take(x, rows, cols):
    """Elements ``x[rows[k], cols[k]]`` as a vector."""
    x = as_tensor(x)
    rows = _check_index(rows, x.shape[0], "take")
    cols = _check_index(cols, x.shape[1], "take")

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return _op(x.data[rows, cols], (x,), backward, "take")


def logsumexp(x, mask=None):
    """Row-wise ``log sum_k exp(x[r, k])`` over entries where ``mask`` holds."""
    x = as_tensor(x)
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeMismatch("logsumexp mask shape")
    z = np.where(mask, x.data, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    w = np.where(mask, np.exp(z - zmax), 0.0)
    total = w.sum(axis=1, keepdims=True)
    y = (np.log(total) + zmax)[:, 0]
    soft = w / total
    return _op(y, (x,), lambda g: (g[:, None] * soft,), "logsumexp")


def l2_normalize(x):
    """Rows scaled to unit Euclidean norm."""
    x = as_tensor(x)
    norm = np.sqrt(np.sum(x.data * x.data, axis=1, keepdims=True))
    y = x.data / norm

    def backward(g):
        return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norm,)

    return _op(y, (x,), backward, "l2_normalize")


# ---------------------------------------------------------------- normalization

def batch_norm(x, scale, shift, running_mean, running_var, train=True, eps=1e-5, momentum=0.1):
    """Per-feature batch normalization over the rows of ``x``.

    Returns ``(y, stats)``; in train mode ``stats`` holds the updated
    ``(running_mean, running_var)`` (unbiased variance estimate) for the
    caller to commit, in eval mode it is ``None``.  Gradients flow through
    the batch statistics.
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    if x.ndim != 2 or scale.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise ShapeMismatch(f"batch_norm: x {x.shape}, scale {scale.shape}, shift {shift.shape}")
    n = x.shape[0]
    if not train:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) * inv
        y = xhat * scale.data + shift.data
        return _op(y, (x, scale, shift),
                   lambda g: (g * scale.data * inv, (g * xhat).sum(0), g.sum(0)), "batch_norm"), None
    if n == 0:
        return _op(x.data.copy(), (x, scale, shift),
                   lambda g: (g, np.zeros_like(scale.data), np.zeros_like(shift.data)),
                   "batch_norm"), None
    mu = x.data.mean(axis=0)
    centered = x.data - mu
    var = (centered * centered).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    y = xhat * scale.data + shift.data

    def backward(g):
        dxhat = g * scale.data
        dx = inv / n * (n * dxhat - dxhat.sum(0) - xhat * (dxhat * xhat).sum(0))
        return dx, (g * xhat).sum(0), g.sum(0)

    unbiased = var * n / max(n - 1, 1)
    stats = ((1 - momentum) * running_mean + momentum * mu,
             (1 - momentum) * running_var + momentum * unbiased)
    return _op(y, (x, scale, shift), backward, "batch_norm"), stats


# ---------------------------------------------------------------- losses

def cross_entropy(logits, targets):
    """Mean softmax cross entropy against integer class targets."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or len(targets) != logits.shape[0]:
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape}, {len(targets)} targets")
    n, c = logits.shape
    if n == 0:
        raise BadTarget("cross_entropy over zero samples")
    if targets.min() < 0 or targets.max() >= c:
        raise BadTarget(f"target outside [0, {c})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    total = e.sum(axis=1, keepdims=True)
    lse = np.log(total)[:, 0] + zmax[:, 0]
    rows = np.arange(n)
    loss = np.mean(lse - z[rows, targets])
    soft = e / total

    def backward(g):
        d = soft.copy()
        d[rows, targets] -= 1.0
        return (d * (g / n),)

    return _op(np.asarray(loss), (logits,), backward, "cross_entropy")


def mse(pred, target):
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    size = diff.size
    return _op(np.asarray(np.mean(diff * diff)), (pred,),
               lambda g: (g * 2.0 * diff / size,), "mse")


def binary_cross_entropy_with_logits(logits, targets):
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ShapeMismatch(f"bce: {logits.shape} vs {targets.shape}")
    if np.any((targets < 0) | (targets > 1)):
        raise BadTarget("binary targets must lie in [0, 1]")
    x = logits.data
    loss = np.mean(np.maximum(x, 0.0) - x * targets + np.log1p(np.exp(-np.abs(x))))
    size = x.size

    def backward(g):
        return (g * (_sigmoid(x) - targets) / size,)

    return _op(np.asarray(loss), (logits,), backward, "bce_with_logits")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    """Logistic function on arrays (not differentiated; used for scoring)."""
    return _sigmoid(np.asarray(x, dtype=np.float64))
