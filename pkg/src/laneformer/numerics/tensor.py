"""Dense float64 tensors with reverse-mode gradients.

Every primitive returns a new :class:`Tensor`. When gradient recording is on and
any input requires a gradient, the output keeps references to its parents and a
closure that pushes the upstream gradient back to them. :class:`GradTape`
linearises that graph into topological order for the backward sweep.
"""
import contextlib

import numpy as np

from ..errors import NonFiniteError, ShapeError

_GRAD_ENABLED = True
_CHECK_FINITE = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_finite_check(enabled):
    """Toggle the NaN/Inf check run after every primitive. Returns the old value."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)
    return prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def backward(self, grad=None):
        GradTape.from_output(self).backward(grad)

    # operator sugar
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

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not conformable") from None


class GradTape:
    """Recorded primitive applications, in an order valid for replaying adjoints."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out):
        order, seen = [], set()
        stack = [(out, False)]
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
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def backward(self, grad=None):
        out = self.nodes[-1]
        if grad is None:
            if out.data.size != 1:
                raise ShapeError(f"backward needs an explicit gradient for shape {out.shape}")
            grad = np.ones_like(out.data)
        _accum(out, np.asarray(grad, dtype=np.float64))
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


# ---------------------------------------------------------------- primitives


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, -_unbroadcast(g, b.shape))

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: _accum(a, g * c), "scale")


def matmul(a, b):
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")
    if b.ndim == 2 and a.ndim > 2:
        # linear layer: fold the leading axes so forward and both gradients are single GEMMs
        a2 = a.data.reshape(-1, a.shape[-1])

        def bw_flat(g):
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                _accum(a, (g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                _accum(b, a2.T @ g2)

        return _make((a2 @ b.data).reshape(*a.shape[:-1], b.shape[1]), (a, b), bw_flat, "matmul")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: _accum(a, g * mask), "relu")


def sigmoid(a):
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), lambda g: _accum(a, g * y * (1.0 - y)), "sigmoid")


def softmax(a, axis=-1):
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (a,), bw, "softmax")


def log(a):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)
    return _make(y, (a,), lambda g: _accum(a, g / a.data), "log")


def clamp_min(a, lo):
    a = as_tensor(a)
    mask = a.data >= lo
    return _make(np.maximum(a.data, lo), (a,), lambda g: _accum(a, g * mask), "clamp_min")


def tabs(a):
    a = as_tensor(a)
    sgn = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: _accum(a, g * sgn), "abs")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, shape))

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _make(y, (a,), lambda g: _accum(a, g.reshape(a.shape)), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: _accum(a, g.transpose(inv)), "transpose")


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in ts]} differ off axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, sizes, axis=axis)):
            _accum(t, part)

    return _make(y, tuple(ts), bw, "concat")


def index(a, idx):
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(np.array(a.data[idx]), (a,), bw, "index")


def linear(x, w, b=None):
    """``x @ w + b`` with ``w`` shaped (in, out)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    y = matmul(x, w)
    return y if b is None else add(y, b)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, _unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            _accum(beta, _unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            _accum(x, dx)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "layer_norm")


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D convolution on channels-last input.

    x: (B, H, W, Cin); w: (k, k, Cin, Cout); returns (B, Ho, Wo, Cout).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} does not match kernel {w.shape}")
    k = w.shape[0]
    bsz, h, wd, cin = x.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :ho, :wo]  # (B, Ho, Wo, Cin, k, k)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(bsz * ho * wo, k * k * cin)
    wmat = w.data.reshape(k * k * cin, -1)
    y = (cols @ wmat).reshape(bsz, ho, wo, -1)
    if b is not None:
        b = as_tensor(b)
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        if w.requires_grad:
            _accum(w, (cols.T @ g2).reshape(w.shape))
        if b is not None and b.requires_grad:
            _accum(b, g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(bsz, ho, wo, k, k, cin)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, :, i, j]
            _accum(x, gxp[:, padding:padding + h, padding:padding + wd])

    return _make(y, parents, bw, "conv2d")
