"""Dense float32 tensors with reverse-mode automatic differentiation.

Values are stored as row-major float32 arrays; reductions and matmul
accumulate in float64 before casting back. Operations record onto the
thread-local active tape (see `tape()`), and `backward()` replays the
tape once in reverse recording order. A tape is consumed by `backward`;
a second call on the same tape raises.

Broadcasting follows the numpy rule: shapes are aligned on trailing
dimensions, and a dimension of size 1 (or a missing leading dimension)
stretches to match its partner. Gradients of broadcast operands are
summed back over the stretched axes.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NoTape, NotScalar, ShapeMismatch, TapeConsumed

__all__ = [
    "Tensor", "Tape", "tape", "backward",
    "add", "sub", "mul", "div", "neg", "matmul",
    "conv2d", "max_pool2d", "relu", "sigmoid", "softplus",
    "exp", "log", "sqrt", "absolute", "sin", "cos",
    "minimum", "maximum", "where",
    "sum_", "mean", "reshape", "transpose", "concat", "stack",
    "affine_grid_sample",
]


class _Node:
    __slots__ = ("output", "inputs", "vjp")

    def __init__(self, output, inputs, vjp):
        self.output = output
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of operations for one reverse pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self._watched_ids: set[int] = set()
        self.watched: list[Tensor] = []

    def watch(self, t: "Tensor") -> None:
        """Register a leaf so backward() reports a (possibly zero) gradient for it."""
        if id(t) not in self._watched_ids:
            self._watched_ids.add(id(t))
            self.watched.append(t)


_STATE = threading.local()


def _tape_stack() -> list[Tape]:
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = []
        _STATE.stack = stack
    return stack


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def tape():
    """Activate a fresh tape on this thread for the duration of the block."""
    t = Tape()
    _tape_stack().append(t)
    try:
        yield t
    finally:
        _tape_stack().pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.node: _Node | None = None
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _slice(self, key)


def _not_scalar(t):
    raise NotScalar(f"expected a scalar tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(out_data)
    t = _active_tape()
    if t is not None and not t.consumed and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        node = _Node(out, inputs, vjp)
        out.node = node
        t.nodes.append(node)
        for i in inputs:
            if i.requires_grad and i.node is None:
                t.watch(i)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that broadcasting stretched."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.astype(np.float32, copy=False).reshape(shape)


# --- elementwise binary ---

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _record(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g / bd, a.shape),
                _unbroadcast(-g * ad / (bd * bd), b.shape))

    return _record(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient routes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def vjp(g):
        return (_unbroadcast(g * take_a, a.shape),
                _unbroadcast(g * ~take_a, b.shape))

    return _record(out, (a, b), vjp)


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient routes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def vjp(g):
        return (_unbroadcast(g * take_a, a.shape),
                _unbroadcast(g * ~take_a, b.shape))

    return _record(out, (a, b), vjp)


def where(cond, a, b) -> Tensor:
    """Select by condition values. `cond` is used as a constant mask."""
    c = cond.data if isinstance(cond, Tensor) else np.asarray(cond)
    mask = c.astype(bool)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(mask, a.data, b.data)

    def vjp(g):
        return (_unbroadcast(g * mask, a.shape),
                _unbroadcast(g * ~mask, b.shape))

    return _record(out, (a, b), vjp)


# --- elementwise unary ---

def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0)
    pos = a.data > 0
    return _record(out, (a,), lambda g: (g * pos,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    p = x >= 0
    out[p] = 1.0 / (1.0 + np.exp(-x[p]))
    ex = np.exp(x[~p])
    out[~p] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _record(out, (a,), vjp)


def softplus(a) -> Tensor:
    """log(1 + exp(x)) computed without overflow."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    sig = 1.0 / (1.0 + np.exp(-np.clip(x, -60, 60)))
    return _record(out, (a,), lambda g: (g * sig,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (g * (0.5 / out),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _record(np.abs(a.data), (a,), lambda g: (g * sign,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(np.cos(ad), (a,), lambda g: (g * -np.sin(ad),))


# --- matmul / conv / pooling ---

def matmul(a, b) -> Tensor:
    """1-D and 2-D matrix product, float64 accumulation."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim > 2 or b.ndim > 2 or a.ndim == 0 or b.ndim == 0:
        raise ShapeMismatch(f"matmul supports 1-D and 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad64 = a.data.astype(np.float64)
    bd64 = b.data.astype(np.float64)
    out = (ad64 @ bd64).astype(np.float32)

    def vjp(g):
        g64 = g.astype(np.float64)
        if a.ndim == 2 and b.ndim == 2:
            ga = g64 @ bd64.T
            gb = ad64.T @ g64
        elif a.ndim == 2 and b.ndim == 1:
            ga = np.outer(g64, bd64)
            gb = ad64.T @ g64
        elif a.ndim == 1 and b.ndim == 2:
            ga = bd64 @ g64
            gb = np.outer(ad64, g64)
        else:  # 1-D @ 1-D -> scalar
            ga = g64 * bd64
            gb = g64 * ad64
        return ga.astype(np.float32), gb.astype(np.float32)

    return _record(out, (a, b), vjp)


def conv2d(x, w) -> Tensor:
    """2-D correlation, stride 1, zero padding "same", odd kernel.

    x: (B, C, H, W), w: (O, C, kh, kw) -> (B, O, H, W)
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-D input and kernel, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if Cw != C:
        raise ShapeMismatch(f"conv2d channel mismatch: input {C}, kernel {Cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatch("conv2d requires odd kernel sizes for same padding")
    ph, pw = kh // 2, kw // 2

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B,C,H,W,kh,kw)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))  # (B,H,W,O)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    wd = w.data

    def vjp(g):
        # dW: correlate input windows with the output gradient
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (O,C,kh,kw)
        # dX: full correlation of g with the flipped kernel
        gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))  # (B,O,H,W,kh,kw)
        wflip = wd[:, :, ::-1, ::-1]
        gx = np.tensordot(gwin, wflip, axes=([1, 4, 5], [0, 2, 3]))  # (B,H,W,C)
        gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
        return gx.astype(np.float32), gw.astype(np.float32)

    return _record(out, (x, w), vjp)


def max_pool2d(x) -> Tensor:
    """2x2 max pooling with stride 2; H and W must be even."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeMismatch(f"max_pool2d expects (B,C,H,W), got {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeMismatch(f"max_pool2d requires even spatial dims, got {H}x{W}")
    H2, W2 = H // 2, W // 2
    xr = x.data.reshape(B, C, H2, 2, W2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H2, W2, 4)
    idx = np.argmax(xr, axis=-1)
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gr = np.zeros((B, C, H2, W2, 4), dtype=np.float32)
        np.put_along_axis(gr, idx[..., None], g[..., None], axis=-1)
        gx = gr.reshape(B, C, H2, W2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        return (gx,)

    return _record(out, (x,), vjp)


# --- reductions / shape ---

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(np.float32)
    shape = a.shape

    def vjp(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(g, axis)
        elif axis is None and not keepdims:
            gg = np.asarray(g)
        return (np.broadcast_to(gg, shape).astype(np.float32, copy=False),)

    return _record(out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis_n = _norm_axis(axis, a.ndim)
    out = a.data.mean(axis=axis_n, keepdims=keepdims, dtype=np.float64).astype(np.float32)
    if axis_n is None:
        count = a.size
    else:
        count = int(np.prod([a.shape[i] for i in axis_n]))
    shape = a.shape

    def vjp(g):
        gg = g
        if not keepdims and axis_n is not None:
            gg = np.expand_dims(g, axis_n)
        return (np.broadcast_to(gg, shape).astype(np.float32) / count,)

    return _record(out, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    out = a.data.reshape(shape)
    return _record(out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.transpose(axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return _record(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def _slice(a, key) -> Tensor:
    a = as_tensor(a)
    out = a.data[key]
    if isinstance(out, np.ndarray) and out.base is not None:
        out = out.copy()
    shape = a.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=np.float32)
        gx[key] = g
        return (gx,)

    return _record(np.asarray(out), (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _record(out, tuple(ts), vjp)


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def vjp(g):
        parts = np.split(g, len(ts), axis=axis)
        return tuple(np.ascontiguousarray(np.squeeze(p, axis=axis)) for p in parts)

    return _record(out, tuple(ts), vjp)


# --- sampling ---

def affine_grid_sample(img, grid) -> Tensor:
    """Bilinear sampling of `img` at `grid` positions, zero outside.

    img: (B, C, H, W); grid: (B, Ho, Wo, 2) holding (x, y) positions in
    pixel-center coordinates, i.e. (col + 0.5, row + 0.5) hits a pixel
    exactly. Differentiable with respect to the image only; the grid is
    treated as a constant.
    """
    img = as_tensor(img)
    gt = as_tensor(grid)
    if gt.requires_grad:
        raise ShapeMismatch("affine_grid_sample does not differentiate through the grid")
    if img.ndim != 4 or gt.ndim != 4 or gt.shape[-1] != 2:
        raise ShapeMismatch(f"bad shapes for grid sample: {img.shape}, {gt.shape}")
    B, C, H, W = img.shape
    if gt.shape[0] != B:
        raise ShapeMismatch("grid batch dimension must match image")
    g = gt.data.astype(np.float64)
    u = g[..., 0] - 0.5  # column index space
    v = g[..., 1] - 0.5  # row index space
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = (u - x0).astype(np.float32)
    fy = (v - y0).astype(np.float32)

    corners = []
    for dy in (0, 1):
        for dx in (0, 1):
            xs = x0 + dx
            ys = y0 + dy
            valid = (xs >= 0) & (xs < W) & (ys >= 0) & (ys < H)
            wgt = (fx if dx else 1 - fx) * (fy if dy else 1 - fy) * valid
            corners.append((np.clip(xs, 0, W - 1), np.clip(ys, 0, H - 1), wgt))

    bI = np.arange(B).reshape(B, 1, 1)
    out = np.zeros((B, C) + gt.shape[1:3], dtype=np.float32)
    for xs, ys, wgt in corners:
        vals = img.data[bI, :, ys, xs]  # (B, Ho, Wo, C)
        out += (vals * wgt[..., None]).transpose(0, 3, 1, 2)

    def vjp(gout):
        gimg = np.zeros((B, C, H, W), dtype=np.float32)
        cI = np.arange(C).reshape(1, C, 1, 1)
        for xs, ys, wgt in corners:
            contrib = gout * wgt[:, None, :, :]
            np.add.at(gimg, (bI[:, None], cI, ys[:, None, :, :], xs[:, None, :, :]), contrib)
        return gimg, None

    return _record(out, (img, gt), vjp)


# --- reverse pass ---

def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Run the reverse pass from a scalar loss over the active tape.

    Returns a map from each watched leaf to its gradient (zeros if the
    leaf did not influence the loss), and mirrors it on `leaf.grad`.
    The tape is consumed; calling backward twice on one tape raises.
    """
    t = _active_tape()
    if t is None:
        raise NoTape("backward() requires an active tape; use `with tape():`")
    if t.consumed:
        raise TapeConsumed("this tape was already consumed by backward()")
    if loss.size != 1:
        raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
    t.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(t.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.vjp(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            prev = grads.get(id(inp))
            grads[id(inp)] = gi if prev is None else prev + gi

    result: dict[Tensor, np.ndarray] = {}
    for leaf in t.watched:
        g = grads.get(id(leaf))
        if g is None:
            g = np.zeros_like(leaf.data)
        g = np.asarray(g, dtype=np.float32).reshape(leaf.shape)
        leaf.grad = g
        result[leaf] = g
    return result
