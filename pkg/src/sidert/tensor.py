"""Dense float64 tensors with a record-on-forward reverse-mode autodiff tape.

Every op creates its output with a monotonically increasing sequence number,
so the recording order of a graph is recoverable from the tensors alone and
backward simply walks the reachable nodes in reverse sequence order.
"""

from __future__ import annotations

import itertools
import struct
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "DimensionError",
    "DomainError",
    "backward",
    "matmul",
    "softmax_rows",
    "linear",
    "bilinear_upsample",
    "resize_bilinear",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "sigmoid",
    "gelu",
    "clamp_min",
    "sum",
    "mean",
    "masked_sum",
    "reshape",
    "transpose",
    "layer_norm",
    "tensor_to_bytes",
    "tensor_from_bytes",
    "save_tensor",
    "load_tensor",
]

# Set to True to verify every op output is finite.
DEBUG = False

_seq = itertools.count()


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An input lies outside the domain of a pointwise op."""

    def __init__(self, op: str, index: tuple, value: float):
        self.op = op
        self.index = index
        self.value = value
        super().__init__(f"{op}: value {value!r} at index {index} is outside the domain")


class Tensor:
    """A float64 array that can take part in a differentiation graph.

    Leaf tensors are created directly; op outputs carry their parents and a
    backward rule. ``grad`` is only populated on leaves with
    ``requires_grad=True``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._seq = next(_seq)

    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple, rule: Callable, op: str) -> "Tensor":
        if DEBUG and not np.all(np.isfinite(data)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(data))[0])
            raise FloatingPointError(f"{op} produced a non-finite value at index {bad}")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._seq = next(_seq)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = rule
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axes=None, keepdims: bool = False):
        return sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False):
        return mean(self, axes, keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Graph:
    """The recorded operations reachable from an output, in recording order."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        seen = {id(output)}
        stack = [output]
        nodes = []
        while stack:
            t = stack.pop()
            nodes.append(t)
            for p in t._parents:
                if id(p) not in seen and p.requires_grad:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list:
        return [t for t in self.nodes if t.is_leaf]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    graph = Graph.trace(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _first_bad(mask: np.ndarray) -> tuple:
    return tuple(int(i) for i in np.argwhere(mask)[0])


# --- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), rule, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise DomainError("div", _first_bad(b.data == 0), 0.0)
    out = a.data / b.data

    def rule(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return Tensor._result(out, (a, b), rule, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    bad = ~(a.data > 0)
    if bad.any():
        idx = _first_bad(bad)
        raise DomainError("log", idx, float(a.data[idx]))
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    bad = ~(a.data >= 0)
    if bad.any():
        idx = _first_bad(bad)
        raise DomainError("sqrt", idx, float(a.data[idx]))
    out = np.sqrt(a.data)
    return Tensor._result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def rule(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return Tensor._result(out, (a,), rule, "gelu")


def clamp_min(a, lo: float) -> Tensor:
    a = _as_tensor(a)
    keep = a.data > lo
    return Tensor._result(np.where(keep, a.data, lo), (a,), lambda g: (g * keep,), "clamp_min")


# --- reductions ------------------------------------------------------------


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def sum(x, axes=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axes(axes, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._result(np.asarray(out), (x,), rule, "sum")


def mean(x, axes=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axes(axes, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axes, keepdims), 1.0 / n)


def masked_sum(x, mask) -> Tensor:
    """Sum of ``x`` over positions where ``mask == 1``."""
    x = _as_tensor(x)
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if m.shape != x.shape:
        raise DimensionError(f"masked_sum: mask shape {m.shape} != input shape {x.shape}")
    keep = m != 0
    out = np.asarray(x.data[keep].sum())
    return Tensor._result(out, (x,), lambda g: (np.where(keep, g, 0.0),), "masked_sum")


# --- shape ops -------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return Tensor._result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return Tensor._result(out, (x,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(x, index) -> Tensor:
    x = _as_tensor(x)
    out = np.array(x.data[index])

    def rule(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(out, (x,), rule, "getitem")


# --- linear algebra --------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes must match."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")

    def rule(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return Tensor._result(a.data @ b.data, (a, b), rule, "matmul")


def softmax_rows(x, scale: float = 1.0) -> Tensor:
    """Softmax over the last axis of ``scale * x``, max-subtracted."""
    x = _as_tensor(x)
    if np.isnan(x.data).any():
        raise DomainError("softmax_rows", _first_bad(np.isnan(x.data)), float("nan"))
    z = x.data * scale if scale != 1.0 else x.data
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (scale * s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._result(s, (x,), rule, "softmax_rows")


def linear(x, w, b=None) -> Tensor:
    """Affine map over the last axis: ``x @ w + b``."""
    x, w = _as_tensor(x), _as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    parents = (x, w)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (w.shape[1],):
            raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
        out = out + b.data
        parents = (x, w, b)

    def rule(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._result(out.reshape(lead + (w.shape[1],)), parents, rule, "linear")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis."""
    mu = mean(x, -1, keepdims=True)
    xc = x - mu
    var = mean(xc * xc, -1, keepdims=True)
    return xc / sqrt(var + eps) * gain + bias


# --- resampling ------------------------------------------------------------


@lru_cache(maxsize=256)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the bilinear weights of output sample i (half-pixel centres)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    m.setflags(write=False)
    return m


def resize_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of a ``C x H x W`` tensor to ``C x out_h x out_w``."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"resize_bilinear expects C x H x W, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("output extents must be positive")
    mh = _interp_matrix(x.shape[1], out_h)
    mw = _interp_matrix(x.shape[2], out_w)
    out = mh @ x.data @ mw.T
    return Tensor._result(out, (x,), lambda g: (mh.T @ g @ mw,), "resize_bilinear")


def bilinear_upsample(x, factor: int) -> Tensor:
    """Upsample a ``C x H x W`` tensor by an integer factor."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsample factor must be a positive integer, got {factor!r}")
    x = _as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"bilinear_upsample expects C x H x W, got {x.shape}")
    factor = int(factor)
    return resize_bilinear(x, factor * x.shape[1], factor * x.shape[2])


# --- serialization ---------------------------------------------------------

_MAGIC = b"SRTT"


def tensor_to_bytes(t) -> bytes:
    """Encode as ``SRTT``, u32 rank, u64 extents, little-endian f64 payload."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    head = _MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple:
    """Decode one tensor record; returns ``(tensor, next_offset)``."""
    if buf[offset : offset + 4] != _MAGIC:
        raise ValueError(f"bad tensor magic at byte {offset}")
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    pos = offset + 8
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    n = int(np.prod(shape)) if rank else 1
    end = pos + 8 * n
    if end > len(buf):
        raise ValueError(f"truncated tensor payload at byte {pos}")
    arr = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64)
    return Tensor(arr.reshape(shape)), end


def save_tensor(path, t) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(t))


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())[0]
