"""Dense tensors with a reverse-mode gradient tape.

Feature maps follow the [channels, time] convention, optionally with a
leading batch axis. Forward arithmetic is plain numpy; when a GradTape is
active, every primitive appends one record with its backward rule.
Operations never mutate their inputs, and one training step owns one tape.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError

DEFAULT_DTYPE = np.float64


class Tensor:
    """A dense float array plus gradient metadata."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def assert_finite(self, label: str | None = None) -> "Tensor":
        if not np.isfinite(self.data).all():
            what = label or self.name or "tensor"
            raise NumericError(f"non-finite values in {what}")
        return self

    def __repr__(self) -> str:
        head = f"Tensor(shape={self.shape}, dtype={self.dtype.name}"
        if self.name:
            head += f", name={self.name!r}"
        return head + ")"

    # operator sugar; scalars become constants in this tensor's dtype
    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    def __rmul__(self, other):
        return mul(_coerce(other, self), self)

    def __truediv__(self, other):
        return div(self, _coerce(other, self))

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _coerce(other, self))


def _coerce(value, like: "Tensor | None" = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value)
    if like is not None and arr.ndim == 0:
        # keep scalar constants from widening a float32 graph
        arr = arr.astype(like.dtype)
    return Tensor(arr)


class GradTape:
    """Ordered record of primitive operations with their backward rules.

    Replaying the records in reverse accumulates the gradient of a scalar
    loss into every requires_grad tensor reached, exactly once each.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable, str]] = []

    def __enter__(self) -> "GradTape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _TAPES.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule: Callable, op: str) -> None:
        self._records.append((out, inputs, rule, op))

    def first_nonfinite(self) -> str | None:
        """Name of the earliest recorded op whose output holds NaN/Inf."""
        for i, (out, _, _, op) in enumerate(self._records):
            if not np.isfinite(out.data).all():
                label = out.name or op
                return f"{label} (record {i})"
        return None

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate d(loss)/d(tensor) for every requires_grad tensor.

        Sets .grad on those tensors and returns them as a dict. The loss
        must be a scalar (size one).
        """
        if loss.data.size != 1:
            raise DimensionError(
                f"backward needs a scalar loss, got shape {loss.shape}"
            )
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, rule, op in reversed(self._records):
            g_out = grads.pop(id(out), None)
            if g_out is None:
                continue
            holders.pop(id(out), None)
            input_grads = rule(g_out)
            for t, g in zip(inputs, input_grads):
                if g is None or not t.requires_grad:
                    continue
                if g.shape != t.data.shape:
                    raise DimensionError(
                        f"{op}: gradient shape {g.shape} != value shape {t.data.shape}"
                    )
                seen = grads.get(id(t))
                grads[id(t)] = g if seen is None else seen + g
                holders[id(t)] = t
        result: dict[Tensor, np.ndarray] = {}
        for tid, t in holders.items():
            if t.requires_grad:
                t.grad = grads[tid]
                result[t] = grads[tid]
        return result


_TAPES: list[GradTape] = []


def active_tape() -> GradTape | None:
    return _TAPES[-1] if _TAPES else None


def _register(out: Tensor, inputs: tuple[Tensor, ...], rule: Callable, op: str) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, rule, op)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _register(out, (a, b), rule, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _register(out, (a, b), rule, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _register(out, (a, b), rule, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)

    def rule(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _register(out, (a, b), rule, "div")


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _register(out, (a,), lambda g: (-g,), "neg")


# ---------------------------------------------------------------------------
# reductions and shape ops

def _axis_tuple(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    out = Tensor(a.data.sum(axis=axes, keepdims=keepdims))

    def rule(g):
        if not keepdims:
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)

    return _register(out, (a,), rule, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = Tensor(a.data.mean(axis=axes, keepdims=keepdims))

    def rule(g):
        if not keepdims:
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False) / count,)

    return _register(out, (a,), rule, "mean")


def mean_over_time(a: Tensor) -> Tensor:
    """Mean along the trailing time axis: [..., C, T] to [..., C]."""
    return mean(a, axis=-1)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _register(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes))
    return _register(out, (a,), lambda g: (g.transpose(inverse),), "transpose")


def swap_trailing(a: Tensor) -> Tensor:
    """Swap the last two axes, e.g. [B, C, T] to [B, T, C]."""
    if a.ndim < 2:
        raise DimensionError(f"swap_trailing needs ndim >= 2, got shape {a.shape}")
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of an empty tensor list")
    ax = axis % tensors[0].ndim
    out = Tensor(np.concatenate([t.data for t in tensors], axis=ax))
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        pieces = []
        for i in range(len(sizes)):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _register(out, tuple(tensors), rule, "concat")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis of [..., C, T] feature maps."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("concat_channels expects [..., C, T] inputs")
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(
            f"concat_channels: time axis mismatch {a.shape[-1]} != {b.shape[-1]}"
        )
    return concat([a, b], axis=-2)


def slice_along(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = axis % a.ndim
    sl = [slice(None)] * a.ndim
    sl[ax] = slice(start, stop)
    sl = tuple(sl)
    out = Tensor(a.data[sl])

    def rule(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return (full,)

    return _register(out, (a,), rule, "slice")


# ---------------------------------------------------------------------------
# nonlinearities

def sqrt(a: Tensor) -> Tensor:
    out = Tensor(np.sqrt(a.data))

    def rule(g):
        return (g * 0.5 / out.data,)

    return _register(out, (a,), rule, "sqrt")


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    return _register(out, (a,), lambda g: (g * out.data,), "exp")


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _register(out, (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))
    return _register(out, (a,), lambda g: (g * (1.0 - out.data * out.data),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    pos = x >= 0
    zed = np.empty_like(x)
    zed[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    zed[~pos] = ex / (1.0 + ex)
    out = Tensor(zed)
    return _register(out, (a,), lambda g: (g * out.data * (1.0 - out.data),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    # subgradient 0 at the kink
    return _register(out, (a,), lambda g: (g * (a.data > 0.0),), "relu")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    out = Tensor(np.maximum(a.data, floor))
    return _register(out, (a,), lambda g: (g * (a.data > floor),), "clamp_min")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(a.data, lo, hi))

    def rule(g):
        return (g * ((a.data > lo) & (a.data < hi)),)

    return _register(out, (a,), rule, "clip")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def rule(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _register(out, (a,), rule, "softmax")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner axis mismatch {a.shape[-1]} != {b.shape[-2]}"
        )
    out = Tensor(np.matmul(a.data, b.data))

    def rule(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _register(out, (a, b), rule, "matmul")


# ---------------------------------------------------------------------------
# 1-d convolution over [.., C, T] with same padding

def _conv_columns(x: np.ndarray, k: int, dilation: int) -> np.ndarray:
    """Contiguous im2col matrix [B, C * k, T] of dilated windows."""
    pad = (k - 1) * dilation // 2
    t = x.shape[-1]
    padded = np.zeros((x.shape[0], x.shape[1], t + 2 * pad), dtype=x.dtype)
    padded[:, :, pad : pad + t] = x
    view = np.lib.stride_tricks.sliding_window_view(padded, t, axis=2)
    cols = view[:, :, 0 : (k - 1) * dilation + 1 : dilation, :]
    return np.ascontiguousarray(cols).reshape(x.shape[0], x.shape[1] * k, t)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, dilation: int) -> np.ndarray:
    k = w.shape[-1]
    if k == 1:
        out = np.matmul(w[:, :, 0], x)
    else:
        cols = _conv_columns(x, k, dilation)
        out = np.matmul(w.reshape(w.shape[0], -1), cols)
    if b is not None:
        out += b[None, :, None]
    return out


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, dilation: int = 1) -> Tensor:
    """Dilated 1-d convolution with symmetric zero padding, length preserved.

    x is [C_in, T] or [B, C_in, T]; w is [C_out, C_in, k] with odd k;
    b is [C_out] or None.
    """
    if w.ndim != 3:
        raise DimensionError(f"conv1d kernel must be [C_out, C_in, k], got {w.shape}")
    k = w.shape[-1]
    if k % 2 != 1:
        raise DimensionError(f"conv1d kernel width must be odd, got {k}")
    if dilation < 1:
        raise DimensionError(f"conv1d dilation must be >= 1, got {dilation}")
    if x.ndim not in (2, 3):
        raise DimensionError(f"conv1d input must be [C, T] or [B, C, T], got {x.shape}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.shape[1] != w.shape[1]:
        raise DimensionError(
            f"conv1d: channel axis mismatch, input has {xd.shape[1]} channels "
            f"but kernel expects {w.shape[1]}"
        )
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"conv1d bias must be [C_out]={w.shape[0]}, got {b.shape}")
    out_data = _conv_forward(xd, w.data, None if b is None else b.data, dilation)
    out = Tensor(out_data[0] if squeeze else out_data)

    def rule(g):
        gd = g[None] if squeeze else g
        t = xd.shape[-1]
        c_out = w.shape[0]
        if k == 1:
            cols = xd
        else:
            cols = _conv_columns(xd, k, dilation)
        # one GEMM over the flattened batch-time axis
        g_mat = np.ascontiguousarray(gd.transpose(1, 0, 2)).reshape(c_out, -1)
        c_mat = np.ascontiguousarray(cols.transpose(1, 0, 2)).reshape(cols.shape[1], -1)
        gw = np.matmul(g_mat, c_mat.T).reshape(c_out, w.shape[1], k)
        # input gradient is a convolution with the flipped, transposed kernel
        w_flip = np.ascontiguousarray(w.data.transpose(1, 0, 2)[:, :, ::-1])
        gx = _conv_forward(gd, w_flip, None, dilation)
        gb = None if b is None else gd.sum(axis=(0, 2))
        grads = (gx[0] if squeeze else gx, gw)
        return grads + ((gb,) if b is not None else ())

    inputs = (x, w) + ((b,) if b is not None else ())
    return _register(out, inputs, rule, "conv1d")


# ---------------------------------------------------------------------------
# finite differences

def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at x.

    f is evaluated 2 * x.size times on perturbed copies; x is untouched.
    """
    base = np.array(x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(base)
        flat[i] = orig - eps
        lo = f(base)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise deviation scaled by the largest magnitude involved.

    The scale is floored at one, so the measure is relative for large
    gradients and absolute for vanishing ones.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(a), initial=0.0)),
                float(np.max(np.abs(b), initial=0.0)), 1.0)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale
