"""Dense float tensors with reverse-mode automatic differentiation.

A thread-local tape records every differentiable operation as it runs
(define-by-run).  ``backward`` walks the tape in reverse, accumulates
gradients into the ``grad`` slot of every tensor that requires them, and
discards the tape.  Tensors are immutable after creation except for
``grad`` (and ``data`` between optimizer steps, which the optimizer owns).

Only float32/float64 are supported.  Gradient checking should run at
float64; central differences are unreliable at float32.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "exp",
    "log",
    "tensor_sum",
    "mean",
    "reshape",
    "permute",
    "concat",
    "roll",
    "gather_rows",
    "softmax",
    "log_softmax",
    "layer_norm",
    "gelu",
    "linear",
    "backward",
    "zero_grads",
    "no_grad",
    "set_debug_checks",
    "debug_checks_enabled",
    "grad_check",
    "GradCheckReport",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class _State(threading.local):
    def __init__(self):
        self.tape: Tape | None = None
        self.tracing = True
        self.debug = False


_state = _State()


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf assertions after every forward op (debug mode only)."""
    _state.debug = bool(enabled)


def debug_checks_enabled() -> bool:
    return _state.debug


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure forward evaluation)."""
    prev = _state.tracing
    _state.tracing = False
    try:
        yield
    finally:
        _state.tracing = prev


class Tensor:
    """Dense n-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self._tape: Tape | None = None

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

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


@dataclass
class TapeNode:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Append-only record of differentiable ops, in execution order.

    Execution order is a topological order by construction: an op's inputs
    always exist before its output.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def append(self, node: TapeNode) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1


def _active_tape() -> Tape:
    if _state.tape is None:
        _state.tape = Tape()
    return _state.tape


def _record(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
            backward_fn) -> Tensor:
    if _state.debug and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    requires = _state.tracing and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        tape = _active_tape()
        out.node_id = tape.append(TapeNode(op, inputs, out, backward_fn))
        out._tape = tape
    return out


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(tensor) into ``grad`` of every reachable tensor.

    ``loss`` must be a scalar recorded on the current tape.  Gradients
    accumulate across calls; the tape is discarded afterwards.
    """
    if loss.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise ValueError("loss is not connected to the tape (nothing requires grad)")
    tape = loss._tape
    seed = np.ones_like(loss.data)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for node in reversed(tape.nodes[: loss.node_id + 1]):
        g_out = node.output.grad
        if g_out is None:
            continue
        grads = node.backward_fn(g_out)
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = g.copy() if g is g_out else g
            else:
                inp.grad = inp.grad + g
    # define-by-run: the tape is consumed by backward
    for node in tape.nodes:
        node.output._tape = None
        node.output.node_id = None
    tape.nodes.clear()
    if _state.tape is tape:
        _state.tape = None


def zero_grads(tensors) -> None:
    it = tensors.values() if isinstance(tensors, dict) else tensors
    for t in it:
        t.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic --------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", (a, b), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _record("mul", (a, b), out, bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def bwd(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _record("div", (a, b), out, bwd)


def neg(a: Tensor) -> Tensor:
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"matmul batch extents incompatible: "
                         f"{a.shape} @ {b.shape}") from e

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
        return ga, gb

    return _record("matmul", (a, b), out, bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    return _record("log", (a,), out, lambda g: (g / a.data,))


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape),)

    return _record("sum", (a,), out, bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in ax]))
    s = tensor_sum(a, axis=axis, keepdims=keepdims)
    return mul(s, Tensor(np.asarray(1.0 / n, dtype=a.dtype)))


# -- index remappings --------------------------------------------------------


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}") from e
    return _record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute axes {axes} invalid for ndim {a.ndim}")
    inv = np.argsort(axes)
    out = a.data.transpose(axes)
    return _record("permute", (a,), out, lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from e
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", ts, out, bwd)


def _getitem(a: Tensor, key) -> Tensor:
    if isinstance(key, (np.ndarray, list)):
        raise TypeError("advanced indexing is not differentiable here; "
                        "use gather_rows")
    out = a.data[key]

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return _record("slice", (a,), out, bwd)


def roll(a: Tensor, shifts, axes) -> Tensor:
    shifts = tuple(np.atleast_1d(shifts).tolist())
    axes = tuple(np.atleast_1d(axes).tolist())
    for ax in axes:
        if not -a.ndim <= ax < a.ndim:
            raise ShapeError(f"roll axis {ax} out of range for ndim {a.ndim}")
    out = np.roll(a.data, shifts, axis=axes)
    inv = tuple(-s for s in shifts)
    return _record("roll", (a,), out, lambda g: (np.roll(g, inv, axis=axes),))


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of ``table`` by an integer index array.

    Output shape is ``index.shape + table.shape[1:]``; backward scatter-adds.
    """
    index = np.asarray(index)
    if index.dtype.kind not in "iu":
        raise TypeError("gather_rows index must be integer")
    out = table.data[index]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index, g)
        return (gt,)

    return _record("gather_rows", (table,), out, bwd)


# -- neural-net primitives ---------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for ndim {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax", (x,), out, bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", (x,), out, bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    n = x.shape[-1]
    if n == 0:
        raise ShapeError("layer_norm over a zero-extent axis")
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({n},), "
            f"got gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = gamma.data * xhat + beta.data

    def bwd(g):
        gx = ggamma = gbeta = None
        reduce_axes = tuple(range(x.ndim - 1))
        if gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=reduce_axes)
        if beta.requires_grad:
            gbeta = g.sum(axis=reduce_axes)
        if x.requires_grad:
            gxhat = g * gamma.data
            m1 = gxhat.mean(axis=-1, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
            gx = (gxhat - m1 - xhat * m2) * inv_std
        return gx, ggamma, gbeta

    return _record("layer_norm", (x, gamma, beta), out, bwd)


_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def gelu(x: Tensor, approximate: bool = False) -> Tensor:
    """GELU activation; exact erf form by default, tanh form for cross-checks."""
    xd = x.data
    if approximate:
        c = float(np.sqrt(2.0 / np.pi))
        inner = c * (xd + 0.044715 * xd ** 3)
        t = np.tanh(inner)
        out = 0.5 * xd * (1.0 + t)

        def bwd(g):
            sech2 = 1.0 - t * t
            d = 0.5 * (1.0 + t) + 0.5 * xd * sech2 * c * (1.0 + 3 * 0.044715 * xd ** 2)
            return (g * d,)
    else:
        phi_cdf = 0.5 * (1.0 + _erf(xd * _INV_SQRT2))
        out = xd * phi_cdf

        def bwd(g):
            pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
            return (g * (phi_cdf + xd * pdf),)

    out = out.astype(xd.dtype, copy=False)
    return _record("gelu", (x,), out, bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: x @ w (+ b)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input extent {x.shape} does not match "
                         f"weight {w.shape}")
    y = matmul(x, w)
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias shape {b.shape} does not match "
                             f"weight {w.shape}")
        y = add(y, b)
    return y


# -- gradient checking -------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    worst_index: tuple[int, ...] | None

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _rel_err(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return np.abs(a - b) / scale


def grad_check(f, x: Tensor, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare the tape gradient of scalar-valued ``f`` against central
    finite differences at ``x``.

    Relative error is |g_tape - g_fd| / max(|g_tape|, |g_fd|, 1).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    probe = Tensor(x.data.copy(), requires_grad=True, dtype=x.dtype)
    out = f(probe)
    if out.size != 1:
        raise ShapeError("grad_check expects a scalar-valued function")
    probe.grad = None
    backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)

    fd = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    fd_flat = fd.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f(Tensor(probe.data, dtype=x.dtype)).item()
            flat[i] = orig - h
            lo = f(Tensor(probe.data, dtype=x.dtype)).item()
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * h)

    err = _rel_err(analytic, fd)
    worst = None
    max_err = 0.0
    if err.size:
        idx = np.unravel_index(np.argmax(err), err.shape)
        worst = tuple(int(i) for i in idx)
        max_err = float(err[idx])
    return GradCheckReport(max_rel_err=max_err, tol=tol, worst_index=worst)
