"""Dense float64 tensors with tape-based reverse-mode differentiation.

The engine is a Wengert list: every differentiable op appends one record to
the active Tape, and Tape.backward walks the list once in reverse.  Records
are appended in creation order, so the list is already topologically sorted
and backprop needs no recursion regardless of graph depth.

With no tape active, ops run in inference mode: same numerics, no recording,
no saved intermediates.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import erf as _scipy_erf

from .errors import ContractViolation, DomainError

__all__ = [
    "Tensor",
    "Tape",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "broadcast_to",
    "tsum",
    "tmean",
    "cumsum",
    "reduce_min",
    "texp",
    "tlog",
    "tsqrt",
    "tabs",
    "clip",
    "where",
    "relu",
    "gelu",
    "sigmoid",
    "erf",
    "softmax",
    "layer_norm",
    "conv2d",
    "upsample2x",
]

_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)
_INV_SQRT2 = 1.0 / np.sqrt(2.0)

_STATE = threading.local()


def _tape_stack() -> list:
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = []
        _STATE.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 ndarray plus an accumulated gradient slot.

    Args:
        data: anything np.asarray accepts; stored as float64.
        requires_grad: when True and a tape is active, downstream ops
            record adjoints for this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all routed through the module-level ops
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    """Coerce scalars and arrays to a constant Tensor; pass Tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class Tape:
    """Records ops for one reverse sweep.  Used as a context manager.

    Entering pushes the tape onto a thread-local stack; ops record onto the
    innermost active tape.  backward() accumulates gradients into the .grad
    slot of every recorded tensor with requires_grad set.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        if popped is not self:
            raise ContractViolation("tape stack corrupted: exited out of order")

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> None:
        self._records.append((out, parents, backward_fn))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and sweep the list in reverse.

        Args:
            loss: scalar output recorded on this tape.

        Raises:
            ContractViolation: if loss is not scalar.
        """
        if loss.data.size != 1:
            raise ContractViolation(
                f"backward: loss must be scalar, got shape {loss.data.shape}"
            )
        # clear stale adjoints on intermediates; leaves keep accumulating
        # across backward calls until the optimizer resets them
        for out, _, _ in self._records:
            out.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, parents, backward_fn in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            parent_grads = backward_fn(g)
            for parent, pg in zip(parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = pg.copy() if pg.base is not None else pg
                else:
                    parent.grad = parent.grad + pg


def _record(out_data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.record(out, parents, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ContractViolation(
            f"{name}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record(ad * bd, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("div", a, b)
    if np.any(b.data == 0.0):
        raise DomainError("div: denominator contains zero")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g / bd
        gb = -g * ad / (bd * bd)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record(ad / bd, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (-g,)

    return _record(-a.data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ContractViolation(
            f"matmul: operands must be at least 2-d, got {a.data.ndim}-d and {b.data.ndim}-d"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ContractViolation(
            f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}"
        )
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record(ad @ bd, (a, b), backward)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape

    def backward(g):
        return (g.reshape(old),)

    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ContractViolation(f"reshape: cannot view {old} as {shape}") from None
    return _record(out, (a,), backward)


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.data.ndim))[::-1]
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inv),)

    return _record(a.data.transpose(axes), (a,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractViolation("concat: empty tensor list")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ContractViolation(f"concat: {e}") from None
    return _record(out, tuple(tensors), backward)


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape

    def backward(g):
        return (_unbroadcast(g, old),)

    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ContractViolation(f"broadcast_to: cannot broadcast {old} to {shape}") from None
    return _record(out.copy(), (a,), backward)


def _getitem(a: Tensor, idx) -> Tensor:
    # basic indexing only (ints/slices/tuples); each input element feeds at
    # most one output element, so the adjoint is a plain slice-assign
    out = a.data[idx]
    shape = a.data.shape

    def backward(g):
        ga = np.zeros(shape, dtype=np.float64)
        ga[idx] = g
        return (ga,)

    return _record(np.array(out, dtype=np.float64, copy=True), (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.data.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, shape).copy(),)

    return _record(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.data.shape
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([shape[ax] for ax in axes]))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk / count, shape).copy(),)

    return _record(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


def cumsum(a: Tensor, axis: int) -> Tensor:
    def backward(g):
        # adjoint of prefix-sum is reversed prefix-sum along the same axis
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _record(np.cumsum(a.data, axis=axis), (a,), backward)


def reduce_min(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Minimum along one axis; ties route the gradient to the first argmin."""
    idx = np.argmin(a.data, axis=axis)
    shape = a.data.shape

    def backward(g):
        ga = np.zeros(shape, dtype=np.float64)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(ga, np.expand_dims(idx, axis), gk, axis=axis)
        return (ga,)

    return _record(a.data.min(axis=axis, keepdims=keepdims), (a,), backward)


# ---------------------------------------------------------------------------
# pointwise


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _record(out, (a,), backward)


def tlog(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log: input must be strictly positive")
    ad = a.data

    def backward(g):
        return (g / ad,)

    return _record(np.log(ad), (a,), backward)


def tsqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise DomainError("sqrt: input must be non-negative")
    out = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / out,)

    return _record(out, (a,), backward)


def tabs(a: Tensor) -> Tensor:
    ad = a.data

    def backward(g):
        return (g * np.sign(ad),)

    return _record(np.abs(ad), (a,), backward)


def clip(a: Tensor, lo: float | None, hi: float | None) -> Tensor:
    ad = a.data
    mask = np.ones_like(ad, dtype=bool)
    if lo is not None:
        mask &= ad > lo
    if hi is not None:
        mask &= ad < hi

    def backward(g):
        return (g * mask,)

    return _record(np.clip(ad, lo, hi), (a,), backward)


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select; cond is a plain bool array, never differentiated."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(cond.shape, a.data.shape, b.data.shape)
    except ValueError:
        raise ContractViolation(
            f"where: shapes {cond.shape}, {a.data.shape}, {b.data.shape} do not broadcast"
        ) from None

    def backward(g):
        ga = _unbroadcast(np.where(cond, g, 0.0), a.data.shape)
        gb = _unbroadcast(np.where(cond, 0.0, g), b.data.shape)
        return ga, gb

    return _record(np.where(cond, a.data, b.data), (a, b), backward)


def relu(a: Tensor) -> Tensor:
    ad = a.data

    def backward(g):
        return (g * (ad > 0.0),)

    return _record(np.maximum(ad, 0.0), (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x) with Phi the standard normal CDF."""
    ad = a.data
    phi_cdf = 0.5 * (1.0 + _scipy_erf(ad * _INV_SQRT2))

    def backward(g):
        pdf = np.exp(-0.5 * ad * ad) / np.sqrt(2.0 * np.pi)
        return (g * (phi_cdf + ad * pdf),)

    return _record(ad * phi_cdf, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    ad = a.data
    out = np.empty_like(ad)
    pos = ad >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ez = np.exp(ad[~pos])
    out[~pos] = ez / (1.0 + ez)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _record(out, (a,), backward)


def erf(a: Tensor) -> Tensor:
    ad = a.data

    def backward(g):
        return (g * 2.0 * _INV_SQRT_PI * np.exp(-ad * ad),)

    return _record(_scipy_erf(ad), (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record(out, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift.

    Args:
        x: (..., d) input.
        gamma: (d,) scale.
        beta: (d,) shift.
        eps: variance floor.
    """
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ContractViolation(
            f"layer_norm: gamma/beta must have shape ({d},), got "
            f"{gamma.data.shape} and {beta.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=tuple(range(g.ndim - 1)))
        gbeta = g.sum(axis=tuple(range(g.ndim - 1)))
        gx_hat = g * gd
        # standard layernorm adjoint over the last axis
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggamma, gbeta

    return _record(xhat * gd + beta.data, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# spatial ops


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-d cross-correlation over NCHW input.

    Args:
        x: (B, C_in, H, W) input.
        w: (C_out, C_in, k, k) kernel; k must be 1 or 3, or equal the stride
           (the patchify case).
        b: optional (C_out,) bias.
        stride: spatial stride.
        padding: symmetric zero padding.

    Returns:
        (B, C_out, H_out, W_out) tensor.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ContractViolation(
            f"conv2d: expected 4-d input and kernel, got {x.data.ndim}-d and {w.data.ndim}-d"
        )
    batch, c_in, h, wd = x.data.shape
    c_out, c_in_w, kh, kw = w.data.shape
    if kh != kw:
        raise ContractViolation(f"conv2d: kernel must be square, got {kh}x{kw}")
    k = kh
    if k not in (1, 3) and k != stride:
        raise ContractViolation(
            f"conv2d: kernel size {k} unsupported (allowed: 1, 3, or k == stride)"
        )
    if c_in_w != c_in:
        raise ContractViolation(
            f"conv2d: input has {c_in} channels but kernel expects {c_in_w}"
        )
    if b is not None and b.data.shape != (c_out,):
        raise ContractViolation(f"conv2d: bias must have shape ({c_out},)")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < k or wp < k:
        raise ContractViolation(
            f"conv2d: spatial size {h}x{wd} with padding {padding} is smaller "
            f"than kernel {k}"
        )
    # floor semantics: trailing rows/cols that do not fit a full stride are dropped
    h_out = (hp - k) // stride + 1
    w_out = (wp - k) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    # im2col via k*k strided views; k is tiny so the python loop is cheap
    cols = np.empty((batch, c_in, k, k, h_out, w_out), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[
                :, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride
            ]
    colmat = cols.transpose(0, 4, 5, 1, 2, 3).reshape(batch * h_out * w_out, c_in * k * k)
    wmat = w.data.reshape(c_out, c_in * k * k)
    out = colmat @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(batch, h_out, w_out, c_out).transpose(0, 3, 1, 2)

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(batch * h_out * w_out, c_out)
        gw = (gmat.T @ colmat).reshape(w.data.shape)
        gcol = (gmat @ wmat).reshape(batch, h_out, w_out, c_in, k, k)
        gcol = gcol.transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros((batch, c_in, hp, wp), dtype=np.float64)
        for i in range(k):
            for j in range(k):
                gxp[
                    :, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride
                ] += gcol[:, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _record(out, parents, backward)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of an NCHW tensor."""
    if x.data.ndim != 4:
        raise ContractViolation(f"upsample2x: expected 4-d input, got {x.data.ndim}-d")
    batch, c, h, w = x.data.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(batch, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _record(out, (x,), backward)
