"""Dense float tensor with tape-ordered reverse-mode differentiation.

Every op returns a new ``Tensor``; when any input requires a gradient the
result remembers its parents and a closure that maps the output gradient to
input gradients.  ``backward`` replays those closures in reverse creation
order, so each node is visited exactly once.
"""

from __future__ import annotations

import contextlib
import itertools
import logging
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

_default_dtype = np.float32
_seq = itertools.count()


class DimensionError(ValueError):
    """Shapes handed to an op are incompatible."""


class ContractError(RuntimeError):
    """A precondition of the calling contract does not hold."""


class NumericError(FloatingPointError):
    """An op produced NaN or Inf."""


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for newly created tensors.

    Training and sampling run in float32.  Finite-difference checks switch to
    float64 so that truncation error, not rounding, dominates the comparison.
    """
    global _default_dtype
    old = _default_dtype
    _default_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = old


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced non-finite values")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype or _default_dtype)
        _check_finite(arr, "Tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_seq)

    # -- basic accessors ---------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        return permute(self, axes)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], fn, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_seq)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = fn
    else:
        out._parents = ()
        out._backward = None
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that requires a gradient."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in nodes:
            continue
        nodes[id(node)] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in sorted(nodes.values(), key=lambda n: n._seq, reverse=True):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            _check_finite(pg, "backward")
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- elementwise -------------------------------------------------------------

def _scalar_or_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (only scalar broadcast is allowed)")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum(dtype=np.float64), dtype=g.dtype).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _scalar_or_same(a, b, "add")

    def fn(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _result(a.data + b.data, (a, b), fn, "add")


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _scalar_or_same(a, b, "mul")
    ad, bd = a.data, b.data

    def fn(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return _result(ad * bd, (a, b), fn, "mul")


def silu(x: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * sig

    def fn(g):
        return (g * (sig * (1.0 + x.data * (1.0 - sig)))).astype(x.dtype, copy=False),

    return _result(out.astype(x.dtype, copy=False), (x,), fn, "silu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)

    def fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)
        return y * (g - dot),

    return _result(y, (x,), fn, "softmax")


# -- reductions and shape ----------------------------------------------------

def sum_(x: Tensor, axis=None) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis, dtype=np.float64), dtype=x.dtype)

    def fn(g):
        if axis is None:
            return np.broadcast_to(g, x.shape).copy(),
        return np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),

    return _result(out, (x,), fn, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    axes = tuple(range(x.ndim)) if axis is None else (axis if isinstance(axis, tuple) else (axis,))
    count = int(np.prod([x.shape[a] for a in axes]))
    out = np.asarray(x.data.mean(axis=axis, dtype=np.float64), dtype=x.dtype)

    def fn(g):
        g = g / count
        if axis is None:
            return np.broadcast_to(g, x.shape).astype(x.dtype),
        return np.broadcast_to(np.expand_dims(g, axis), x.shape).astype(x.dtype),

    return _result(out, (x,), fn, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute axes {axes} invalid for rank {x.ndim}")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _result(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),), "permute")


def expand(x: Tensor, shape) -> Tensor:
    """Broadcast size-1 axes of ``x`` to ``shape`` (same rank required)."""
    shape = tuple(shape)
    if x.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(x.shape, shape)):
        raise DimensionError(f"cannot expand {x.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape)) if s != t)

    def fn(g):
        return g.sum(axis=axes, keepdims=True, dtype=np.float64).astype(x.dtype),

    return _result(np.broadcast_to(x.data, shape).copy(), (x,), fn, "expand")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise DimensionError(f"concat: {t.shape} incompatible with {ref} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def fn(g):
        return [np.take(g, range(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])]

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), fn, "concat")


def take(x: Tensor, start: int, stop: int, axis: int = 1) -> Tensor:
    """Contiguous slice ``[start, stop)`` along ``axis``."""
    if not 0 <= start < stop <= x.shape[axis]:
        raise DimensionError(f"slice [{start}, {stop}) out of range for axis {axis} of {x.shape}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def fn(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return full,

    return _result(x.data[index].copy(), (x,), fn, "take")


def embedding(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError("embedding table must be 2-D")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError("embedding index out of range")

    def fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return full,

    return _result(table.data[idx], (table,), fn, "embedding")


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; equal leading batch axes are allowed on both sides."""
    if a.ndim < 2 or b.ndim != a.ndim:
        raise DimensionError(f"matmul needs equal-rank operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _result(ad @ bd, (a, b), fn, "matmul")


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    return tuple(int(p) for p in v)


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, padding=None) -> Tensor:
    """Zero-padded, stride-1 cross-correlation over frames, rows and columns.

    x: (frames, in_ch, h, w); kernel: (out_ch, in_ch, kt, kh, kw).
    ``padding=None`` keeps the input extent for odd kernels.
    """
    if x.ndim != 4 or kernel.ndim != 5:
        raise DimensionError(f"conv3d expects (f,c,h,w) and (o,c,kt,kh,kw), got {x.shape}, {kernel.shape}")
    f, c, h, w = x.shape
    o, kc, kt, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"conv3d: input has {c} channels, kernel expects {kc}")
    pt, ph, pw = _triple(padding if padding is not None else (kt // 2, kh // 2, kw // 2))
    if kt > f + 2 * pt or kh > h + 2 * ph or kw > w + 2 * pw:
        raise DimensionError(f"conv3d: kernel {kernel.shape[2:]} larger than padded input")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv3d: bias shape {bias.shape} != ({o},)")

    xp = np.pad(x.data, ((pt, pt), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kt, kh, kw), axis=(0, 2, 3))
    fo, ho, wo = win.shape[0], win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5, 6).reshape(fo * ho * wo, c * kt * kh * kw)
    kmat = kernel.data.reshape(o, -1)
    out = (cols @ kmat.T).reshape(fo, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def fn(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        dk = (gmat.T @ cols).reshape(kernel.shape)
        dcols = (gmat @ kmat).reshape(fo, ho, wo, c, kt, kh, kw)
        dxp = np.zeros_like(xp)
        for a in range(kt):
            for b in range(kh):
                for d in range(kw):
                    dxp[a:a + fo, :, b:b + ho, d:d + wo] += dcols[:, :, :, :, a, b, d].transpose(0, 3, 1, 2)
        dx = dxp[pt:pt + f, :, ph:ph + h, pw:pw + w]
        db = None if bias is None else g.sum(axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)
        return dx, dk, db

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, parents, fn, "conv3d")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, padding=None) -> Tensor:
    """Per-frame 2-D convolution: conv3d with a temporal extent of one."""
    if kernel.ndim != 4:
        raise DimensionError(f"conv2d expects (o,c,kh,kw), got {kernel.shape}")
    k3 = reshape(kernel, (kernel.shape[0], kernel.shape[1], 1, kernel.shape[2], kernel.shape[3]))
    if padding is None:
        padding = (0, kernel.shape[2] // 2, kernel.shape[3] // 2)
    elif isinstance(padding, int):
        padding = (0, padding, padding)
    else:
        padding = (0, *padding)
    return conv3d(x, k3, bias, padding)


def group_norm(x: Tensor, groups: int, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize each channel group over every non-channel axis (channel axis 1)."""
    if x.ndim < 2:
        raise DimensionError("group_norm needs a channel axis")
    c = x.shape[1]
    if groups < 1 or c % groups:
        raise DimensionError(f"{c} channels not divisible into {groups} groups")
    for p in (weight, bias):
        if p is not None and p.shape != (c,):
            raise DimensionError(f"group_norm affine shape {p.shape} != ({c},)")
    lead = x.shape[0]
    xr = x.data.astype(np.float64).reshape(lead, groups, c // groups, -1)
    mu = xr.mean(axis=(0, 2, 3), keepdims=True)
    var = ((xr - mu) ** 2).mean(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xr - mu) * inv
    bshape = (1, c) + (1,) * (x.ndim - 2)
    wd = np.ones(bshape) if weight is None else weight.data.astype(np.float64).reshape(bshape)
    bd = np.zeros(bshape) if bias is None else bias.data.astype(np.float64).reshape(bshape)
    xhat_full = xhat.reshape(x.shape)
    out = (xhat_full * wd + bd).astype(x.dtype)
    red = (0,) + tuple(range(2, x.ndim))

    def fn(g):
        g64 = g.astype(np.float64)
        dxhat = (g64 * wd).reshape(xr.shape)
        m1 = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        m2 = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        dx = (inv * (dxhat - m1 - xhat * m2)).reshape(x.shape).astype(x.dtype)
        dw = None if weight is None else (g64 * xhat_full).sum(axis=red).astype(weight.dtype)
        db = None if bias is None else g64.sum(axis=red).astype(bias.dtype)
        return dx, dw, db

    parents = [x]
    if weight is not None:
        parents.append(weight)
    if bias is not None:
        parents.append(bias)

    def fn_packed(g):
        dx, dw, db = fn(g)
        res = [dx]
        if weight is not None:
            res.append(dw)
        if bias is not None:
            res.append(db)
        return res

    return _result(out, tuple(parents), fn_packed, "group_norm")


def mse_loss(pred: Tensor, target) -> Tensor:
    diff = sub(pred, as_tensor(target))
    return mean(mul(diff, diff))
