"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed inside a ``with Tape() as tape:`` block are appended to
the tape when at least one input requires a gradient.  ``backward(tape, loss)``
walks the tape in reverse append order and accumulates gradients into the
leaf tensors (parameters).  Outside a tape, operations are plain numpy
evaluations with no bookkeeping, which is what inference uses.

Every primitive accepts arbitrary leading batch dimensions where that makes
sense, so the model can push a whole mini-batch through one tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    ContractError,
    EmptySequenceError,
    SequenceTooShortError,
    ShapeError,
)

Array = np.ndarray


class Tensor:
    """An n-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_recorded")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.name = name
        self._recorded = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __rsub__ = lambda self, other: sub(other, self)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __rmul__ = lambda self, other: mul(other, self)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __getitem__ = lambda self, key: index(self, key)  # noqa: E731

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def parameter(data, name: str | None = None) -> Tensor:
    """A leaf tensor that receives gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    out: Tensor
    backward: Callable[[Array], Sequence[Array | None]]


@dataclass
class Tape:
    """Ordered record of differentiable operations."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


_TAPES: list[Tape] = []


def _record(op: str, out_data: Array, inputs: Sequence[Tensor], bwd) -> Tensor:
    out = Tensor(out_data)
    if _TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._recorded = True
        _TAPES[-1].nodes.append(Node(op, tuple(inputs), out, bwd))
    return out


class _SliceGrad:
    """Gradient that is nonzero only on ``key`` of an array of ``shape``."""

    __slots__ = ("key", "value", "shape")

    def __init__(self, key, value: Array, shape: tuple[int, ...]):
        self.key, self.value, self.shape = key, value, shape


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf.

    Gradients of leaves accumulate across calls; call ``zero_grad`` on the
    parameters between optimisation steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    if not loss._recorded:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = set()  # buffers safe to update in place
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._recorded:
                key = id(inp)
                if isinstance(gi, _SliceGrad):
                    buf = grads.get(key)
                    if buf is None:
                        buf = np.zeros(gi.shape)
                    elif key not in owned:
                        buf = buf.copy()
                    buf[gi.key] += gi.value
                    grads[key] = buf
                    owned.add(key)
                elif key in grads:
                    grads[key] = grads[key] + gi
                    owned.add(key)
                else:
                    grads[key] = gi
            else:
                if isinstance(gi, _SliceGrad):
                    if inp.grad is None:
                        inp.grad = np.zeros(gi.shape)
                    inp.grad[gi.key] += gi.value
                else:
                    inp.grad = np.array(gi, dtype=np.float64) if inp.grad is None else inp.grad + gi


# --------------------------------------------------------------------------
# elementwise and structural primitives
# --------------------------------------------------------------------------


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(
        "mul", ad * bd, (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes (numpy broadcasting on the rest)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record("matmul", ad @ bd, (a, b), bwd)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w.T`` for weights stored as (out, in)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {w.shape}")
    xd, wd = x.data, w.data

    def bwd(g):
        gx = g @ wd
        gw = g.reshape(-1, wd.shape[0]).T @ xd.reshape(-1, wd.shape[1])
        return gx, gw

    return _record("linear", xd @ wd.T, (x, w), bwd)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    return _record(
        "swapaxes", np.swapaxes(x.data, a1, a2), (x,),
        lambda g: (np.swapaxes(g, a1, a2),),
    )


def _is_basic_key(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, slice, type(None), type(Ellipsis))) for k in items)


def index(x: Tensor, key) -> Tensor:
    shape = x.shape
    if _is_basic_key(key):
        return _record("index", x.data[key], (x,), lambda g: (_SliceGrad(key, g, shape),))

    def bwd(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _record("index", x.data[key], (x,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise EmptySequenceError("concat of zero tensors")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        return np.split(g, bounds, axis=axis)

    return _record("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise EmptySequenceError("stack of zero tensors")

    def bwd(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return _record("stack", np.stack([t.data for t in tensors], axis=axis), tensors, bwd)


def gather_time(x: Tensor, idx: Array) -> Tensor:
    """``out[b, t] = x[b, idx[b, t]]`` for x of shape (B, T, ...)."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape
    rows = np.arange(shape[0])[:, None]
    out = x.data[rows, idx]

    def bwd(g):
        full = np.zeros(shape)
        np.add.at(full, (rows, idx), g)
        return (full,)

    return _record("gather_time", out, (x,), bwd)


def embedding(weight: Tensor, idx: Array, frozen_row: int | None = None) -> Tensor:
    """Row lookup ``weight[idx]``; ``frozen_row`` never receives gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = weight.shape

    def bwd(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        if frozen_row is not None:
            full[frozen_row] = 0.0
        return (full,)

    return _record("embedding", weight.data[idx], (weight,), bwd)


# --------------------------------------------------------------------------
# nonlinearities
# --------------------------------------------------------------------------


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _record("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return _record("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _record("relu", np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}[kind]
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}") from None
    return fn(x)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _record("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` the input is clipped from below first."""
    xd = x.data
    if floor is None:
        return _record("log", np.log(xd), (x,), lambda g: (g / xd,))
    live = xd >= floor
    clipped = np.maximum(xd, floor)
    return _record("log", np.log(clipped), (x,), lambda g: (np.where(live, g / clipped, 0.0),))


def softmax(x: Tensor, axis: int = -1, mask: Array | None = None) -> Tensor:
    """Softmax with max-subtraction; entries where ``mask`` is False get exactly 0."""
    xd = x.data
    if mask is None:
        shifted = xd - xd.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not mask.any(axis=axis).all():
            raise EmptySequenceError("softmax over a fully masked row")
        filled = np.where(mask, xd, -np.inf)
        shifted = filled - filled.max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(shifted), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record("softmax", y, (x,), bwd)


# --------------------------------------------------------------------------
# sequence primitives
# --------------------------------------------------------------------------


def conv_output_length(length: int, width: int, stride: int = 1) -> int:
    return (length - width) // stride + 1


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Valid cross-correlation over time.

    ``x`` is (T, C_in) or (B, T, C_in); ``kernels`` is (w, C_in, C_out).
    """
    if stride < 1:
        raise ContractError(f"conv1d stride must be >= 1, got {stride}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    w, c_in, c_out = kernels.shape
    if xd.shape[-1] != c_in:
        raise ShapeError(f"conv1d: input channels {xd.shape} vs kernels {kernels.shape}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv1d: bias {bias.shape} vs kernels {kernels.shape}")
    b_, t_in, _ = xd.shape
    if t_in < w:
        raise SequenceTooShortError(f"conv1d: sequence length {t_in} < kernel width {w}")
    t_out = conv_output_length(t_in, w, stride)
    # (B, T', C_in, w) -> (B, T', w, C_in)
    cols = np.lib.stride_tricks.sliding_window_view(xd, w, axis=1)[:, ::stride]
    cols = np.ascontiguousarray(np.swapaxes(cols, 2, 3)).reshape(b_, t_out, w * c_in)
    kmat = kernels.data.reshape(w * c_in, c_out)
    out = cols @ kmat + bias.data
    if squeeze:
        out = out[0]

    def bwd(g):
        g3 = g[None] if squeeze else g
        gk = (cols.reshape(-1, w * c_in).T @ g3.reshape(-1, c_out)).reshape(w, c_in, c_out)
        gb = g3.sum(axis=(0, 1))
        gcols = (g3 @ kmat.T).reshape(b_, t_out, w, c_in)
        gx = np.zeros_like(xd)
        span = stride * (t_out - 1) + 1
        for k in range(w):
            gx[:, k:k + span:stride, :] += gcols[:, :, k, :]
        return (gx[0] if squeeze else gx), gk, gb

    return _record("conv1d", out, (x, kernels, bias), bwd)


def max_pool1d(x: Tensor, window: int, stride: int) -> Tensor:
    """Per-channel windowed maximum over time; ties route gradient to the first maximum."""
    if window < 1 or stride < 1:
        raise ContractError("max_pool1d window and stride must be >= 1")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    t_in = xd.shape[1]
    if t_in < window:
        raise SequenceTooShortError(f"max_pool1d: sequence length {t_in} < window {window}")
    t_out = conv_output_length(t_in, window, stride)
    win = np.lib.stride_tricks.sliding_window_view(xd, window, axis=1)[:, ::stride]
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def bwd(g):
        g3 = g[None] if squeeze else g
        gx = np.zeros_like(xd)
        span = stride * (t_out - 1) + 1
        for k in range(window):
            gx[:, k:k + span:stride, :] += np.where(arg == k, g3, 0.0)
        return (gx[0] if squeeze else gx,)

    return _record("max_pool1d", out, (x,), bwd)


def average_pool(seq: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of a non-empty list of same-shape vectors."""
    if len(seq) == 0:
        raise EmptySequenceError("average_pool of an empty sequence")
    dims = {t.shape for t in seq}
    if len(dims) != 1:
        raise ShapeError(f"average_pool: mixed shapes {sorted(dims)}")
    return tmean(stack(seq, axis=0), axis=0)


def masked_mean(x: Tensor, mask: Array, axis: int = 1) -> Tensor:
    """Mean of ``x`` over ``axis`` counting only positions where ``mask`` is set.

    ``mask`` has the shape of ``x`` without its trailing feature axis.
    """
    m = np.asarray(mask, dtype=np.float64)
    counts = m.sum(axis=axis, keepdims=True)
    if np.any(counts == 0):
        raise EmptySequenceError("masked_mean with no valid positions")
    weights = (m / counts)[..., None]
    return tsum(mul(x, weights), axis=axis)


# --------------------------------------------------------------------------
# randomness, initialisation, regularisation
# --------------------------------------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; identical seeds give identical draws on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def fans(shape: Sequence[int]) -> tuple[int, int]:
    """(fan_in, fan_out) for (out, in) matrices and (w, C_in, C_out) kernels."""
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2 or any(s <= 0 for s in shape):
        raise ContractError(f"xavier init needs >= 2 positive dims, got {shape}")
    if len(shape) == 2:
        return shape[1], shape[0]
    receptive = math.prod(shape[:-2])
    return receptive * shape[-2], receptive * shape[-1]


def xavier_normal_init(shape: Sequence[int], rng: np.random.Generator, name: str | None = None) -> Tensor:
    fan_in, fan_out = fans(shape)
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return parameter(rng.normal(0.0, std, size=tuple(shape)), name=name)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) so inference is identity."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)
