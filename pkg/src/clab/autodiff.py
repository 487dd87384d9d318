"""Minimal reverse-mode automatic differentiation over numpy arrays.

The networks in this package are small enough that a hand-rolled tape is
both fast (all heavy ops are BLAS-backed) and fully deterministic, which
the training loop relies on for bitwise-reproducible runs. Only the ops
the networks actually use are implemented.

Gradients accumulate into ``Tensor.grad`` after calling ``backward()`` on
a scalar result. Wrapping a computation in ``no_grad()`` skips tape
construction entirely (used for teacher forwards and sampling).
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the context."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A numpy array plus the tape bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from this scalar through the recorded tape."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in order:
            if node._vjp is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not (parent.requires_grad or parent._vjp):
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
            # Free intermediate state so long tapes do not pile up.
            node._vjp = None
            node._parents = ()

    # Operator sugar. Plain numbers/arrays are wrapped as constants.
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
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / float(other))
        return mul(self, power(as_tensor(other), -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order of the tape reachable from ``root``."""
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
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _tracked(out_data, parents, vjp) -> Tensor:
    """Create an output tensor, recording the tape node when grads are on."""
    out = Tensor(out_data)
    if _GRAD_ENABLED and any(p.requires_grad or p._vjp is not None for p in parents):
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------

# Python-number operands get folded directly into the numpy expression.
# Wrapping them in float64 arrays instead would silently promote float32
# activations (numpy treats 0-d arrays as strongly typed, plain scalars
# weakly). np.float64 subclasses float, so it is caught and neutralized.
_SCALAR = (int, float)


def add(a, b) -> Tensor:
    if isinstance(b, _SCALAR):
        a, b = as_tensor(a), float(b)
        out = a.data + b

        def vjp(g):
            return (g,)

        return _tracked(out, (a,), vjp)
    if isinstance(a, _SCALAR):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _tracked(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    if isinstance(b, _SCALAR):
        return add(a, -float(b))
    if isinstance(a, _SCALAR):
        a_val = float(a)
        b = as_tensor(b)
        out = a_val - b.data

        def vjp(g):
            return (-g,)

        return _tracked(out, (b,), vjp)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _tracked(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    if isinstance(b, _SCALAR):
        a, b = as_tensor(a), float(b)
        out = a.data * b

        def vjp(g):
            return (g * b,)

        return _tracked(out, (a,), vjp)
    if isinstance(a, _SCALAR):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _tracked(out, (a, b), vjp)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _tracked(out, (a,), vjp)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * (0.5 / out),)

    return _tracked(out, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _tracked(out, (a,), vjp)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _tracked(out, (a,), vjp)


def _sigmoid_val(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows, so both branches stay finite.
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_val(a.data)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _tracked(out, (a,), vjp)


def silu(a) -> Tensor:
    """x * sigmoid(x), the activation used inside the residual blocks."""
    a = as_tensor(a)
    s = _sigmoid_val(a.data)
    out = a.data * s

    def vjp(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return _tracked(out, (a,), vjp)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _tracked(out, (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _tracked(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions / shape
# ---------------------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.data.shape).copy(),)

    return _tracked(out, (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else _axis_size(a.data.shape, axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.data.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 / n, a.data.shape).copy(),)

    return _tracked(out, (a,), vjp)


def _axis_size(shape, axis) -> int:
    if isinstance(axis, int):
        axis = (axis,)
    n = 1
    for ax in axis:
        n *= shape[ax]
    return n


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _tracked(out, (a,), vjp)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    out = a.data.transpose(axes)
    inv = np.argsort(axes)

    def vjp(g):
        return (g.transpose(inv),)

    return _tracked(out, (a,), vjp)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _tracked(out, tuple(tensors), vjp)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def vjp(g):
        bd, ad = b.data, a.data
        ga = g @ np.swapaxes(bd, -1, -2) if bd.ndim > 1 else np.outer(g, bd)
        gb = np.swapaxes(ad, -1, -2) @ g if ad.ndim > 1 else np.outer(ad, g)
        return _unbroadcast_matmul(ga, ad.shape), _unbroadcast_matmul(gb, bd.shape)

    return _tracked(out, (a, b), vjp)


def _unbroadcast_matmul(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum batch dims of a matmul gradient down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i in range(len(shape) - 2) if shape[i] == 1 and grad.shape[i] != 1
    )
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# image ops
# ---------------------------------------------------------------------------


# Forward patch matrices below this size are kept for the backward pass;
# larger ones are recomputed there to bound peak memory.
_COL_CACHE_BYTES = 96 * 1024 * 1024


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """Unfold NCHW input into a (B*Ho*Wo, kh*kw*C) patch matrix.

    Works channels-last internally: transposing the input once is far
    cheaper than transposing the kh*kw-times-larger patch matrix, and the
    (kh, kw, C) patch layout makes every fill a run of C contiguous
    elements.
    """
    b, c, h, w = x.shape
    xp = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    if pad:
        xp = np.pad(xp, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((b, ho, wo, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :]
    return cols.reshape(b * ho * wo, kh * kw * c), ho, wo


def _col2im(gcols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int, ho: int, wo: int):
    """Adjoint of ``_im2col``: scatter-add patch gradients back to NCHW."""
    b, c, h, w = x_shape
    g6 = gcols.reshape(b, ho, wo, kh, kw, c)
    xp = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :] += g6[:, :, :, i, j, :]
    if pad:
        xp = xp[:, pad : pad + h, pad : pad + w, :]
    return np.ascontiguousarray(xp.transpose(0, 3, 1, 2))


def conv2d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation with weight layout (C_out, C_in, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    b_t = as_tensor(bias) if bias is not None else None
    co, ci, kh, kw = w.data.shape
    if x.data.shape[1] != ci:
        raise ValueError(f"conv2d channel mismatch: input {x.data.shape[1]}, weight {ci}")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    wmat = np.ascontiguousarray(w.data.transpose(0, 2, 3, 1)).reshape(co, kh * kw * ci)
    out = cols @ wmat.T
    if b_t is not None:
        out += b_t.data
    nb = x.data.shape[0]
    out = np.ascontiguousarray(out.reshape(nb, ho, wo, co).transpose(0, 3, 1, 2))
    cols_saved = cols if cols.nbytes <= _COL_CACHE_BYTES else None

    def vjp(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(nb * ho * wo, co)
        cols_b = cols_saved if cols_saved is not None else _im2col(x.data, kh, kw, stride, padding)[0]
        gw = (g2.T @ cols_b).reshape(co, kh, kw, ci)
        gw = np.ascontiguousarray(gw.transpose(0, 3, 1, 2))
        gcols = g2 @ wmat
        gx = _col2im(gcols, x.data.shape, kh, kw, stride, padding, ho, wo)
        gb = g2.sum(axis=0) if b_t is not None else None
        return (gx, gw, gb) if b_t is not None else (gx, gw)

    parents = (x, w, b_t) if b_t is not None else (x, w)
    return _tracked(out, parents, vjp)


def upsample_nearest2x(x) -> Tensor:
    x = as_tensor(x)
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        b, c, h2, w2 = g.shape
        return (g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

    return _tracked(out, (x,), vjp)
