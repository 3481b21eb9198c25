"""Dense NCHW tensors with a tape-based reverse-mode autodiff.

Only the handful of primitives the dehazing network needs are provided.
Every primitive records a node on the active :class:`GradTape` when one of
its inputs requires gradients; :func:`backward` replays the tape in reverse.

Training runs in float32. The gradient checker switches to float64 through
:func:`precision`, which changes the dtype new tensors are created with;
primitives always keep the dtype of their inputs.
"""

from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "Tensor",
    "GradTape",
    "precision",
    "get_default_dtype",
    "set_debug",
    "conv2d",
    "relu",
    "sigmoid",
    "global_avg_pool",
    "mul_broadcast",
    "add",
    "sub",
    "absolute",
    "mean",
    "concat_channels",
    "backward",
    "expand",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_default_dtype = np.dtype(np.float32)
_debug = os.environ.get("FFA_DEBUG", "") not in ("", "0")
_tape_stack: list["GradTape"] = []


def get_default_dtype() -> np.dtype:
    return _default_dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    global _default_dtype
    old = _default_dtype
    _default_dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = old


def set_debug(flag: bool) -> None:
    """Enable the finite-output check after every primitive."""
    global _debug
    _debug = bool(flag)


class Tensor:
    """Immutable float array of rank <= 4 (N, C, H, W layout for images)."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype or _default_dtype, copy=True)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} exceeds 4")
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # Internal constructor: adopts a freshly computed array without copying.
        t = cls.__new__(cls)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op, inputs, output, vjp):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class GradTape:
    """Ordered record of primitives executed while the tape is active.

    Use as a context manager. Tensors passed to :meth:`watch` are the ones
    :func:`backward` reports gradients for.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.watched: dict[str, Tensor] = {}

    def __enter__(self) -> "GradTape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)

    def watch(self, tensors: Mapping[str, Tensor] | Iterable[Tensor]) -> None:
        items = tensors.items() if isinstance(tensors, Mapping) else ((t.name, t) for t in tensors)
        for name, t in items:
            if name is None:
                raise ValueError("watched tensors need a name")
            if not t.requires_grad:
                raise ValueError(f"tensor {name!r} does not require grad")
            self.watched[name] = t

    def __len__(self) -> int:
        return len(self.nodes)


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, vjp: Callable) -> Tensor:
    if _debug and not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{op} produced non-finite values")
    needs = any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, needs)
    if needs and _tape_stack:
        _tape_stack[-1].nodes.append(_Node(op, tuple(inputs), result, vjp))
    return result


# ---------------------------------------------------------------------------
# primitives


def _im2col(xp: np.ndarray, k: int) -> np.ndarray:
    """Patches of padded input (N,Ci,Hp,Wp) as (N, Ci*k*k, H*W)."""
    n, c, hp, wp = xp.shape
    if k == 1:
        return xp.reshape(n, c, hp * wp)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N,Ci,H,W,k,k
    h, w = win.shape[2:4]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, h * w)


def _correlate(xp: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Valid cross-correlation of padded input with w (Co,Ci,k,k); also returns the patches."""
    k = w.shape[-1]
    n, _, hp, wp = xp.shape
    cols = _im2col(xp, k)
    out = np.matmul(w.reshape(w.shape[0], -1), cols)
    return out.reshape(n, w.shape[0], hp - k + 1, wp - k + 1), cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """Stride-1 2-D cross-correlation (no kernel flip)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects a rank-4 input and a rank-4 weight")
    cout, cin, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel must be square and odd, got {kh}x{kw}")
    if x.shape[1] != cin:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")
    if padding not in ("same", "none"):
        raise ValueError(f"unknown padding {padding!r}")
    k = kh
    p = (k - 1) // 2 if padding == "same" else 0
    if x.shape[2] + 2 * p < k or x.shape[3] + 2 * p < k:
        raise ShapeError(f"input {x.shape} smaller than kernel {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    out, cols = _correlate(xp, weight.data)
    out += bias.data[None, :, None, None]

    def vjp(g):
        gx = gw = gb = None
        if x.requires_grad:
            q = k - 1 - p
            gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q))) if q else g
            wf = np.ascontiguousarray(weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx = _correlate(gp, wf)[0]
        if weight.requires_grad:
            g2 = g.reshape(g.shape[0], cout, -1)
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _emit("conv2d", (x, weight, bias), out, vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)
    return _emit("relu", (x,), out, lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        s = (1.0 / (1.0 + np.exp(-x.data))).astype(x.dtype)
    return _emit("sigmoid", (x,), s, lambda g: (g * s * (1 - s),))


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError("global_avg_pool expects N x C x H x W")
    h, w = x.shape[2:]
    out = x.data.mean(axis=(2, 3), keepdims=True, dtype=x.dtype)

    def vjp(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

    return _emit("global_avg_pool", (x,), out, vjp)


def _broadcast_ok(a: tuple, b: tuple) -> bool:
    if a == b:
        return True
    if len(a) != 4 or len(b) != 4 or a[0] != b[0]:
        return False
    n, c, h, w = a
    return b == (n, c, 1, 1) or b == (n, 1, h, w)


def mul_broadcast(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may be per-channel (N,C,1,1) or per-pixel (N,1,H,W)."""
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"cannot broadcast {b.shape} onto {a.shape}")
    out = a.data * b.data
    reduce_axes = tuple(i for i, (da, db) in enumerate(zip(a.shape, b.shape)) if da != db)

    def vjp(g):
        ga = g * b.data if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = g * a.data
            if reduce_axes:
                gb = gb.sum(axis=reduce_axes, keepdims=True)
        return ga, gb

    return _emit("mul_broadcast", (a, b), out, vjp)


def expand(b: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Materialize a broadcast as a full tensor (not differentiable)."""
    return Tensor._wrap(np.ascontiguousarray(np.broadcast_to(b.data, shape)), False)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}")
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def absolute(x: Tensor) -> Tensor:
    # np.sign(0) == 0 gives the zero subgradient at the kink
    return _emit("abs", (x,), np.abs(x.data), lambda g: (g * np.sign(x.data),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(dtype=x.dtype), dtype=x.dtype)

    def vjp(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return _emit("mean", (x,), out, vjp)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = parts[0].shape
    for p in parts:
        if p.ndim != 4 or p.shape[0] != ref[0] or p.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: {p.shape} incompatible with {ref}")
    out = np.concatenate([p.data for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _emit("concat_channels", tuple(parts), out, vjp)


# ---------------------------------------------------------------------------


def backward(loss: Tensor, tape: GradTape, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to watched tensors.

    Parameters the loss does not depend on get an all-zero gradient.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    targets = dict(params) if params is not None else tape.watched
    keep = {id(t) for t in targets.values()}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        key = id(node.output)
        g = grads.get(key) if key in keep else grads.pop(key, None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    out = {}
    for name, t in targets.items():
        g = grads.get(id(t))
        out[name] = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.dtype).reshape(t.shape)
    return out
