"""A small reverse-mode autodiff engine over dense numpy arrays.

Operations record themselves on the active :class:`Tape` (if any). A tape is
entered as a context manager; calling :meth:`Tape.backward` walks the
records in reverse and accumulates gradients into every tensor that needs
one::

    with Tape() as tape:
        out = relu(matmul(x, w))
        loss = weighted_sum(out, target)
    tape.backward(loss)
    w.grad  # d loss / d w

With no active tape the same functions just compute values, which is how
evaluation runs.
"""

import contextvars

import numpy as np

from .errors import ConfigError, DegenerateGraphError, ShapeError
from .graph import check_index

_active_tape = contextvars.ContextVar("gpoolnet_active_tape", default=None)


class DiffTensor:
    """Value buffer plus an accumulated gradient buffer of the same shape."""

    __slots__ = ("value", "requires_grad", "name", "_grad")

    def __init__(self, value, requires_grad=False, name=None):
        value = np.asarray(value)
        if value.dtype.kind != "f":
            value = value.astype(np.float64)
        self.value = value
        self.requires_grad = requires_grad
        self.name = name
        self._grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def grad(self):
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    def zero_grad(self):
        self._grad = None

    def accumulate(self, g):
        g = np.asarray(g, dtype=self.value.dtype)
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient shape {g.shape} != value shape {self.value.shape}")
        if self._grad is None:
            self._grad = g.copy()
        else:
            self._grad += g

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"DiffTensor{label}(shape={self.shape}, dtype={self.dtype})"


def param(value, name=None):
    return DiffTensor(value, requires_grad=True, name=name)


def constant(value, dtype=None):
    if isinstance(value, DiffTensor):
        return value
    arr = np.asarray(value)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return DiffTensor(arr)


class Tape:
    """Ordered record of primitive applications.

    Records are appended in execution order, which is already a topological
    order, so the backward pass is a plain reverse walk. A tape can be
    consumed only once.
    """

    def __init__(self):
        self.records = []
        self.consumed = False
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out, inputs, backward_fn):
        self.records.append((out, inputs, backward_fn))

    def backward(self, loss, seed=None):
        """Populate ``.grad`` on every tensor the loss depends on."""
        if self.consumed:
            raise RuntimeError("tape already consumed; double backward is not supported")
        self.consumed = True
        if seed is None:
            seed = np.ones_like(loss.value)
        loss.accumulate(seed)
        for out, inputs, backward_fn in reversed(self.records):
            if out._grad is None:
                continue
            grads = backward_fn(out._grad)
            for inp, g in zip(inputs, grads):
                if g is not None and inp.requires_grad:
                    inp.accumulate(g)
        self.records = []


def backward(tape, loss):
    tape.backward(loss)


def _emit(value, inputs, backward_fn):
    needs = any(t.requires_grad for t in inputs)
    out = DiffTensor(value, requires_grad=needs)
    tape = _active_tape.get()
    if needs and tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


# -- primitives --------------------------------------------------------------


def matmul(a, b):
    """Matrix product; either side may also be a vector (numpy ``@`` rules)."""
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul shapes {av.shape} and {bv.shape} do not align")
    if av.ndim == 2 and bv.ndim == 2:
        def back(g):
            return g @ bv.T, av.T @ g
    elif av.ndim == 2:
        def back(g):
            return np.outer(g, bv), av.T @ g
    elif bv.ndim == 2:
        def back(g):
            return bv @ g, np.outer(av, g)
    else:
        def back(g):
            return g * bv, g * av
    return _emit(av @ bv, (a, b), back)


def add_bias(x, b):
    """Broadcast-add a vector along the last axis of ``x``."""
    x, b = constant(x), constant(b)
    if b.value.ndim != 1 or x.value.shape[-1] != b.value.shape[0]:
        raise ShapeError(f"bias shape {b.shape} does not match {x.shape}")

    def back(g):
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _emit(x.value + b.value, (x, b), back)


def conv1d_same(x, kernel, bias):
    """1-D convolution along rows with zero padding so the row count is kept.

    ``x`` is n x c_in, ``kernel`` is width x c_in x c_out, ``bias`` is c_out.
    out[i, o] = bias[o] + sum_{d, c} x[i + d - width // 2, c] * kernel[d, c, o]
    """
    x, kernel, bias = constant(x), constant(kernel), constant(bias)
    xv, kv = x.value, kernel.value
    width = kv.shape[0]
    if width % 2 == 0:
        raise ConfigError(f"kernel width must be odd, got {width}")
    if xv.ndim != 2 or kv.ndim != 3 or kv.shape[1] != xv.shape[1] or bias.shape != (kv.shape[2],):
        raise ShapeError(f"conv1d shapes x={xv.shape} kernel={kv.shape} bias={bias.shape}")
    n, half = xv.shape[0], width // 2
    padded = np.zeros((n + 2 * half, xv.shape[1]), dtype=xv.dtype)
    padded[half:half + n] = xv
    out = np.broadcast_to(bias.value, (n, kv.shape[2])).copy()
    for d in range(width):
        out += padded[d:d + n] @ kv[d]

    def back(g):
        gk = np.empty_like(kv)
        gpad = np.zeros_like(padded)
        for d in range(width):
            gk[d] = padded[d:d + n].T @ g
            gpad[d:d + n] += g @ kv[d].T
        return gpad[half:half + n], gk, g.sum(axis=0)

    return _emit(out, (x, kernel, bias), back)


def abs(x):  # noqa: A001 - mirrors numpy naming
    x = constant(x)
    xv = x.value
    return _emit(np.abs(xv), (x,), lambda g: (g * np.sign(xv),))


def tanh(x):
    x = constant(x)
    out = np.tanh(x.value)
    return _emit(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x):
    x = constant(x)
    on = x.value > 0
    return _emit(np.where(on, x.value, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * on,))


def concat_cols(a, b):
    """Concatenate along the last axis."""
    a, b = constant(a), constant(b)
    if a.value.shape[:-1] != b.value.shape[:-1]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}")
    split = a.value.shape[-1]
    out = np.concatenate([a.value, b.value.astype(a.dtype, copy=False)], axis=-1)
    return _emit(out, (a, b), lambda g: (g[..., :split], g[..., split:]))


def concat(tensors):
    """Concatenate any number of tensors along the last axis."""
    out = tensors[0]
    for t in tensors[1:]:
        out = concat_cols(out, t)
    return out


def gather_rows(x, idx):
    """Select rows ``idx`` (strictly ascending) of a matrix or entries of a vector."""
    x = constant(x)
    idx = check_index(idx, x.value.shape[0])
    xv = x.value

    def back(g):
        gx = np.zeros_like(xv)
        gx[idx] = g
        return (gx,)

    return _emit(xv[idx], (x,), back)


def rowwise_scale(x, s):
    """out[i, j] = x[i, j] * s[i]."""
    x, s = constant(x), constant(s)
    xv, sv = x.value, s.value
    if xv.ndim != 2 or sv.shape != (xv.shape[0],):
        raise ShapeError(f"rowwise_scale shapes {xv.shape} and {sv.shape}")
    return _emit(xv * sv[:, None], (x, s), lambda g: (g * sv[:, None], (g * xv).sum(axis=1)))


def masked_global_max_pool(x, mask=None):
    """Column-wise max over the rows where ``mask`` is true.

    Gradient goes to a single row per column; ties resolve to the lowest row.
    """
    x = constant(x)
    xv = x.value
    n, c = xv.shape
    if mask is None:
        mask = np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ShapeError(f"mask shape {mask.shape} does not match {n} rows")
    if not mask.any():
        raise DegenerateGraphError("global max pool over a graph with no real nodes")
    masked = np.where(mask[:, None], xv, -np.inf)
    rows = np.argmax(masked, axis=0)
    cols = np.arange(c)

    def back(g):
        gx = np.zeros_like(xv)
        gx[rows, cols] = g
        return (gx,)

    return _emit(xv[rows, cols], (x,), back)


def dropout(x, keep_rate, rng, train):
    """Inverted dropout: scale survivors by 1 / keep_rate while training."""
    x = constant(x)
    if not 0 < keep_rate <= 1:
        raise ConfigError(f"keep rate must be in (0, 1], got {keep_rate}")
    if not train or keep_rate == 1:
        return x
    scale = (rng.random(x.shape) < keep_rate).astype(x.dtype) / x.dtype.type(keep_rate)
    return _emit(x.value * scale, (x,), lambda g: (g * scale,))


def stack_rows(vectors):
    """Stack equal-length vectors into a matrix."""
    vectors = [constant(v) for v in vectors]

    def back(g):
        return tuple(g[i] for i in range(len(vectors)))

    return _emit(np.stack([v.value for v in vectors]), tuple(vectors), back)


def weighted_sum(x, weights):
    """Scalar ``sum(x * weights)`` with constant weights."""
    x = constant(x)
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != x.shape:
        raise ShapeError(f"weights shape {w.shape} != {x.shape}")
    return _emit(np.asarray(np.sum(x.value * w)), (x,), lambda g: (g * w,))


def softmax_cross_entropy(logits, labels, denominator=None):
    """Mean negative log-likelihood of ``labels`` under softmax(logits).

    ``denominator`` overrides the batch size used for the mean, which lets a
    trainer run one graph per tape while still producing the batch-mean
    gradient.
    """
    logits = constant(logits)
    z = logits.value
    if z.ndim != 2:
        raise ShapeError(f"logits must be batch x classes, got {z.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch = z.shape[0]
    if labels.shape != (batch,):
        raise ShapeError(f"{labels.shape[0]} labels for a batch of {batch}")
    denom = batch if denominator is None else denominator
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].sum() / denom

    def back(g):
        d = np.exp(log_probs)
        d[rows, labels] -= 1.0
        return (d * (g / denom),)

    return _emit(np.asarray(loss, dtype=z.dtype), (logits,), back)
