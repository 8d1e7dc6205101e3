"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every operator returns a new :class:`Tensor`.  When at least one operand
requires a gradient, the result records its parents and a closure mapping
the output gradient to one gradient per parent.  :func:`backward` walks
that graph in reverse topological order and accumulates into the
``grad`` buffers of leaf tensors (the entries of a ``ParamStore``).

Operators accept an optional leading batch axis wherever the layout is
``[C, H, W]``; concatenation and channel broadcasting work on axis ``-3``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, StateError

_GRAD_ENABLED = True
_KINK_LOG: list[np.ndarray] | None = None


@contextlib.contextmanager
def no_grad():
    """Evaluate operators without recording a graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# pointwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _make(x.data * factor, (x,), lambda g: (g * factor,))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes differ {a.shape} vs {b.shape}")
    return mul(a, b)


def broadcast_mul_channelwise(x: Tensor, attn: Tensor) -> Tensor:
    """Multiply a ``[1, H, W]`` map across every channel of ``[C, H, W]``."""
    if x.ndim < 3 or attn.shape[-3] != 1 or attn.shape[-2:] != x.shape[-2:] or attn.ndim != x.ndim:
        raise ShapeError(f"broadcast_mul_channelwise: map {attn.shape} does not fit {x.shape}")
    if attn.shape[:-3] != x.shape[:-3]:
        raise ShapeError(f"broadcast_mul_channelwise: batch extents differ {attn.shape} vs {x.shape}")
    return mul(x, attn)


def sigmoid(x: Tensor) -> Tensor:
    # logistic via tanh: overflow-free, and exactly 0.5 at 0
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


@contextlib.contextmanager
def record_kinks():
    """Collect the active-set mask of every ReLU evaluated inside the block."""
    global _KINK_LOG
    prev = _KINK_LOG
    _KINK_LOG = log = []
    try:
        yield log
    finally:
        _KINK_LOG = prev


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _KINK_LOG is not None:
        _KINK_LOG.append(mask)
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


_ELEMENTWISE = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "hadamard": hadamard,
    "add": lambda a, b: _same_shape_add(a, b),
    "scale": scale,
    "broadcast_mul_channelwise": broadcast_mul_channelwise,
}


def _same_shape_add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ {a.shape} vs {b.shape}")
    return add(a, b)


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch one of the named pointwise operators."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*operands)


# ---------------------------------------------------------------------------
# reductions and layout


def sum_all(x: Tensor) -> Tensor:
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def sum_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    return _make(x.data.sum(axis=axis), (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _make(np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, g / n),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: {x.shape} -> {shape}") from None
    return _make(y, (x,), lambda g: (g.reshape(x.shape),))


def take(x: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing."""

    def bw(g):
        full = np.zeros(x.shape)
        full[key] += g
        return (full,)

    return _make(np.array(x.data[key]), (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(y, tensors, lambda g: np.split(g, splits, axis=axis))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shaped tensors on a new leading axis."""
    return concat([reshape(t, (1,) + t.shape) for t in tensors], axis=0)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 3 or a.ndim != b.ndim or a.shape[-2:] != b.shape[-2:] or a.shape[:-3] != b.shape[:-3]:
        raise ShapeError(f"concat_channels: {a.shape} and {b.shape} are not compatible")
    return concat([a, b], axis=-3)


def split_channels(x: Tensor, first: int) -> tuple[Tensor, Tensor]:
    lead = (slice(None),) * (x.ndim - 3)
    return take(x, lead + (slice(0, first),)), take(x, lead + (slice(first, None),))


def flatten_features(x: Tensor) -> Tensor:
    """Collapse the trailing ``[C, H, W]`` axes, keeping any batch axis."""
    return reshape(x, x.shape[:-3] + (int(np.prod(x.shape[-3:])),))


# ---------------------------------------------------------------------------
# linear maps


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``weight @ x + bias`` over the last axis of ``x``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"fully_connected: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"fully_connected: bias {bias.shape} vs weight {weight.shape}")
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = g @ weight.data
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(y, parents, bw)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded 2-D cross-correlation.

    ``x`` is ``[Cin, H, W]`` or ``[B, Cin, H, W]``; ``kernels`` is
    ``[Cout, Cin, kh, kw]`` with odd spatial extents.
    """
    if kernels.ndim != 4:
        raise ShapeError(f"conv2d: kernels must be rank 4, got {kernels.shape}")
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d: input must be [C,H,W] or [B,C,H,W], got {x.shape}")
    cout, cin, kh, kw = kernels.shape
    if x.shape[-3] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[-3]} channels, kernels expect {cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: invalid stride={stride} pad={pad}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} vs {cout} output channels")
    batched = x.ndim == 4
    xb = x.data if batched else x.data[None]
    n, _, h, w = xb.shape
    span_h, span_w = h + 2 * pad - kh, w + 2 * pad - kw
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise ShapeError(f"conv2d: {h}x{w} with pad={pad} stride={stride} does not tile {kh}x{kw}")
    ho, wo = span_h // stride + 1, span_w // stride + 1

    # channel-major columns [Cin*kh*kw, N*Ho*Wo]: one GEMM per pass
    xt = xb.transpose(1, 0, 2, 3)
    if pad:
        xt = np.pad(xt, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((cin, kh, kw, n, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(cin * kh * kw, n * ho * wo)
    kmat = kernels.data.reshape(cout, -1)
    y = kmat @ cols
    if bias is not None:
        y += bias.data[:, None]
    y = np.ascontiguousarray(y.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))
    if not batched:
        y = y[0]
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def bw(g):
        gb = g if batched else g[None]
        gt = gb.transpose(1, 0, 2, 3).reshape(cout, -1)
        gk = (gt @ cols.T).reshape(kernels.shape)
        gx = None
        if x.requires_grad:
            dcols = (kmat.T @ gt).reshape(cin, kh, kw, n, ho, wo)
            dxt = np.zeros(xt.shape)
            for i in range(kh):
                for j in range(kw):
                    dxt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
            gx = dxt[:, :, pad:pad + h, pad:pad + w].transpose(1, 0, 2, 3)
            if not batched:
                gx = gx[0]
        if bias is None:
            return gx, gk
        return gx, gk, gt.sum(axis=1)

    return _make(y, parents, bw)


# ---------------------------------------------------------------------------
# reverse pass


def _topological(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output: Tensor, params=None) -> None:
    """Accumulate ``d output / d leaf`` into every reachable leaf's ``grad``.

    ``params`` (a ``ParamStore``) is optional; when given, its gradient
    buffers are allocated first so untouched parameters read as zero.
    """
    if output.data.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad or output._backward is None:
        raise StateError("backward called on a tensor with no recorded computation")
    if params is not None:
        params.ensure_grads()
    grads: dict[int, np.ndarray] = {id(output): np.ones(output.shape)}
    for node in reversed(_topological(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros(node.shape)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
