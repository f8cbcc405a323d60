"""Dense tensors with reverse-mode automatic differentiation on a tape.

The network computes on 4-D arrays in (batch, channel, height, width)
layout; reductions produce 0-D scalars. Values are float32 by default,
float64 in verification mode (finite-difference checks need the headroom).

A ``Tensor`` is an immutable value: operations return new tensors and never
write into their inputs. Executing ops inside a ``with Tape():`` block
records them in program order; ``tape.backward(loss)`` replays the records
in exact reverse order, accumulating gradients into ``Tensor.grad``.
Outside a tape nothing is recorded and no intermediates are kept.

Convolution is cross-correlation (no kernel flip). Reductions inside
conv2d use BLAS via ``np.tensordot``; the reduction order is fixed by the
BLAS build, so results are bit-deterministic for a fixed thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "Tensor",
    "Tape",
    "ConvSpec",
    "astensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "absolute",
    "exp",
    "log",
    "softplus",
    "relu",
    "tsum",
    "tmean",
    "log_softmax_channels",
    "conv2d",
    "concat_channels",
    "avg_pool2",
    "upsample_bilinear",
]

# Op name whose backward gets deliberately corrupted; used by the
# gradcheck fault-injection test, never in normal operation.
_FAULT_TARGET: str | None = None


def set_fault_target(name: str | None) -> None:
    global _FAULT_TARGET
    _FAULT_TARGET = name


class Tensor:
    """Immutable dense array plus the gradient slot filled by backward()."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # arithmetic sugar; scalars stay python floats so dtype is preserved
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def abs(self):
        return absolute(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


class Tape:
    """Ordered record of executed ops; replayed backward for gradients.

    One tape may be active at a time (``with Tape() as tape:``). Ops
    executed inside the block whose inputs require gradients are appended
    in execution order; ``backward`` walks them in exact reverse order.
    """

    _active: "Tape | None" = None

    def __init__(self):
        # records: (output, tensor_inputs, backward_fn)
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise RuntimeError("nested tapes are not supported")
        Tape._active = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Tape._active = None

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(input) into .grad for every recorded tensor.

        ``loss`` must be a scalar produced under this tape. Tensors the
        loss does not depend on keep ``grad is None`` (read as zero).
        """
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ValueError("backward requires a scalar loss tensor")
        for out, inputs, _ in self._records:
            out.grad = None
            for t in inputs:
                t.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, inputs, backward_fn in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            for t, gi in zip(inputs, backward_fn(g)):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi


def astensor(x, dtype=None) -> Tensor:
    """Wrap an array or scalar as a constant (non-differentiable) tensor."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _trace(out: Tensor, inputs: tuple[Tensor, ...], backward_fn, name: str) -> Tensor:
    tape = Tape._active
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    if name == _FAULT_TARGET:
        inner = backward_fn

        def backward_fn(g):  # noqa: F811 - deliberate corruption hook
            grads = list(inner(g))
            for i, gi in enumerate(grads):
                if gi is not None:
                    grads[i] = gi * 1.01
                    break
            return tuple(grads)

    tape._records.append((out, inputs, backward_fn))
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ConfigError(f"{op}: operand shapes differ, {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "add")
        out = Tensor(a.data + b.data)
        return _trace(out, (a, b), lambda g: (g, g), "add")
    out = Tensor(a.data + b)
    return _trace(out, (a,), lambda g: (g,), "add")


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "sub")
        out = Tensor(a.data - b.data)
        return _trace(out, (a, b), lambda g: (g, -g), "sub")
    out = Tensor(a.data - b)
    return _trace(out, (a,), lambda g: (g,), "sub")


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "mul")
        out = Tensor(a.data * b.data)
        ad, bd = a.data, b.data
        return _trace(out, (a, b), lambda g: (g * bd, g * ad), "mul")
    out = Tensor(a.data * b)
    return _trace(out, (a,), lambda g: (g * b,), "mul")


def div(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "div")
        out = Tensor(a.data / b.data)
        bd, od = b.data, out.data
        return _trace(out, (a, b), lambda g: (g / bd, -g * od / bd), "div")
    out = Tensor(a.data / b)
    return _trace(out, (a,), lambda g: (g / b,), "div")


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _trace(out, (a,), lambda g: (-g,), "neg")


def absolute(a: Tensor) -> Tensor:
    """|x| with subgradient 0 at x = 0."""
    out = Tensor(np.abs(a.data))
    sign = np.sign(a.data)
    return _trace(out, (a,), lambda g: (g * sign,), "abs")


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    od = out.data
    return _trace(out, (a,), lambda g: (g * od,), "exp")


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    ad = a.data
    return _trace(out, (a,), lambda g: (g / ad,), "log")


def softplus(a: Tensor) -> Tensor:
    """ln(1 + e^x), computed stably; gradient is the logistic sigmoid."""
    out = Tensor(np.logaddexp(np.zeros((), dtype=a.dtype), a.data))
    ad = a.data

    def bwd(g):
        sig = np.empty_like(ad)
        pos = ad >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
        e = np.exp(ad[~pos])
        sig[~pos] = e / (1.0 + e)
        return (g * sig,)

    return _trace(out, (a,), bwd, "softplus")


def relu(a: Tensor) -> Tensor:
    """max(x, 0); backward passes gradient only where x > 0."""
    out = Tensor(np.maximum(a.data, 0))
    positive = a.data > 0
    return _trace(out, (a,), lambda g: (g * positive,), "relu")


def tsum(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum()))
    shape = a.data.shape
    return _trace(out, (a,), lambda g: (np.broadcast_to(g, shape),), "sum")


def tmean(a: Tensor) -> Tensor:
    return mul(tsum(a), 1.0 / a.data.size)


def log_softmax_channels(t: Tensor) -> Tensor:
    """log softmax along the channel axis of an NCHW tensor, max-stabilized."""
    if t.data.ndim != 4:
        raise ConfigError(f"log_softmax_channels: expected 4-D NCHW input, got shape {t.data.shape}")
    z = t.data - t.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = Tensor(z - lse)
    od = out.data

    def bwd(g):
        return (g - np.exp(od) * g.sum(axis=1, keepdims=True),)

    return _trace(out, (t,), bwd, "log_softmax")


# ---------------------------------------------------------------------------
# structured ops


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-D convolution: kernel size, stride, zero padding, dilation."""

    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ConfigError(f"ConvSpec: kernel {self.kernel_h}x{self.kernel_w} must be positive")
        if self.stride < 1:
            raise ConfigError(f"ConvSpec: stride {self.stride} must be >= 1")
        if self.padding < 0:
            raise ConfigError(f"ConvSpec: padding {self.padding} must be >= 0")
        if self.dilation < 1:
            raise ConfigError(f"ConvSpec: dilation {self.dilation} must be >= 1")

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding - self.dilation * (self.kernel_h - 1) - 1) // self.stride + 1
        ow = (w + 2 * self.padding - self.dilation * (self.kernel_w - 1) - 1) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ConfigError(
                f"ConvSpec: output size {oh}x{ow} < 1 for input {h}x{w} "
                f"(kernel {self.kernel_h}x{self.kernel_w}, stride {self.stride}, "
                f"pad {self.padding}, dilation {self.dilation})"
            )
        return oh, ow


def _require_nchw(t: Tensor, what: str) -> None:
    if t.data.ndim != 4:
        raise ConfigError(f"{what}: expected 4-D NCHW tensor, got shape {t.data.shape}")


def _gather_cols(xd: np.ndarray, kh: int, kw: int, stride: int,
                 pad_h: int, pad_w: int, dilation: int,
                 oh: int, ow: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """im2col in channel-major layout: (C, kH, kW, N, OH, OW), contiguous.

    That ordering lets the convolution run as one plain matmul with no
    hidden transposition copies.
    """
    n, c, h, w = xd.shape
    if pad_h or pad_w:
        xp = np.zeros((n, c, h + 2 * pad_h, w + 2 * pad_w), dtype=xd.dtype)
        xp[:, :, pad_h:pad_h + h, pad_w:pad_w + w] = xd
    else:
        xp = xd
    span_h = (oh - 1) * stride + 1
    span_w = (ow - 1) * stride + 1
    cols = np.empty((c, kh, kw, n, oh, ow), dtype=xd.dtype)
    xpt = xp.transpose(1, 0, 2, 3)
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            cols[:, i, j] = xpt[:, :, r0:r0 + span_h:stride, c0:c0 + span_w:stride]
    return cols, xp.shape


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Cross-correlation of NCHW input with (C_out, C_in, kH, kW) weights.

    Zero padding; dilation spaces the kernel taps ``spec.dilation`` pixels
    apart. Bias, when given, is broadcast per output channel.
    """
    _require_nchw(x, "conv2d input")
    _require_nchw(weight, "conv2d weight")
    n, c_in, h, w = x.data.shape
    c_out, w_cin, kh, kw = weight.data.shape
    if (kh, kw) != (spec.kernel_h, spec.kernel_w):
        raise ConfigError(
            f"conv2d: weight kernel {kh}x{kw} does not match spec {spec.kernel_h}x{spec.kernel_w}"
        )
    if w_cin != c_in:
        raise ConfigError(f"conv2d: input has {c_in} channels but weight expects {w_cin}")
    if bias is not None and bias.data.shape != (c_out,):
        raise ConfigError(f"conv2d: bias shape {bias.data.shape} must be ({c_out},)")
    oh, ow = spec.out_size(h, w)
    stride, pad, dil = spec.stride, spec.padding, spec.dilation

    cols, padded_shape = _gather_cols(x.data, kh, kw, stride, pad, pad, dil, oh, ow)
    raw = weight.data.reshape(c_out, -1) @ cols.reshape(c_in * kh * kw, n * oh * ow)
    raw = raw.reshape(c_out, n, oh, ow)
    if bias is not None:
        raw += bias.data[:, None, None, None]
    out = Tensor(raw.transpose(1, 0, 2, 3))
    wd = weight.data
    # cols is only needed again for the weight gradient
    cols_for_gw = cols if weight.requires_grad else None

    def bwd(g):
        gw = gb = gx = None
        if cols_for_gw is not None:
            gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(c_out, -1)
            gw = (gmat @ cols_for_gw.reshape(c_in * kh * kw, -1).T).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            bp_h = (kh - 1) * dil - pad
            bp_w = (kw - 1) * dil - pad
            if stride == 1 and bp_h >= 0 and bp_w >= 0:
                # transpose of a stride-1 correlation is a stride-1
                # correlation of g with the flipped, channel-swapped kernel
                flipped = np.ascontiguousarray(
                    wd.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
                gcols, _ = _gather_cols(np.ascontiguousarray(g), kh, kw, 1,
                                        bp_h, bp_w, dil, h, w)
                graw = (flipped.reshape(c_in, -1)
                        @ gcols.reshape(c_out * kh * kw, n * h * w))
                gx = graw.reshape(c_in, n, h, w).transpose(1, 0, 2, 3)
            else:
                gcols = np.tensordot(wd, g, axes=([0], [1]))  # (C_in, kH, kW, N, OH, OW)
                gxp = np.zeros(padded_shape, dtype=g.dtype)
                span_h = (oh - 1) * stride + 1
                span_w = (ow - 1) * stride + 1
                for i in range(kh):
                    r0 = i * dil
                    for j in range(kw):
                        c0 = j * dil
                        gxp[:, :, r0:r0 + span_h:stride, c0:c0 + span_w:stride] += \
                            gcols[:, i, j].transpose(1, 0, 2, 3)
                gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _trace(out, inputs, bwd, "conv2d")


def concat_channels(inputs: list[Tensor]) -> Tensor:
    """Stack feature maps along the channel axis, input order preserved."""
    if not inputs:
        raise ConfigError("concat_channels: need at least one input")
    for t in inputs:
        _require_nchw(t, "concat_channels input")
    n, _, h, w = inputs[0].data.shape
    for k, t in enumerate(inputs[1:], start=1):
        tn, _, th, tw = t.data.shape
        if (tn, th, tw) != (n, h, w):
            raise ConfigError(
                f"concat_channels: input {k} has N,H,W = {(tn, th, tw)}, expected {(n, h, w)}"
            )
    out = Tensor(np.concatenate([t.data for t in inputs], axis=1))
    widths = [t.data.shape[1] for t in inputs]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        return tuple(g[:, offsets[k]:offsets[k + 1]] for k in range(len(widths)))

    return _trace(out, tuple(inputs), bwd, "concat")


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 non-overlapping window mean; halves both spatial dimensions."""
    _require_nchw(x, "avg_pool2 input")
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ConfigError(f"avg_pool2: spatial size {h}x{w} must be even")
    out = Tensor(x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)))

    def bwd(g):
        quarter = g * np.asarray(0.25, dtype=g.dtype)
        return (np.repeat(np.repeat(quarter, 2, axis=2), 2, axis=3),)

    return _trace(out, (x,), bwd, "avg_pool2")


def _bilinear_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    """Row-interpolation matrix for integer upsampling, align-corners false."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in), dtype=dtype)
    for o in range(n_out):
        src = (o + 0.5) / factor - 0.5
        lo = int(np.floor(src))
        frac = src - lo
        lo0 = min(max(lo, 0), n_in - 1)
        lo1 = min(max(lo + 1, 0), n_in - 1)
        m[o, lo0] += 1.0 - frac
        m[o, lo1] += frac
    return m


_BILINEAR_CACHE: dict[tuple[int, int, str], np.ndarray] = {}


def _bilinear_cached(n_in: int, factor: int, dtype) -> np.ndarray:
    key = (n_in, factor, np.dtype(dtype).name)
    m = _BILINEAR_CACHE.get(key)
    if m is None:
        m = _bilinear_matrix(n_in, factor, dtype)
        _BILINEAR_CACHE[key] = m
    return m


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling by an integer factor (align-corners false)."""
    _require_nchw(x, "upsample_bilinear input")
    if factor < 1:
        raise ConfigError(f"upsample_bilinear: factor {factor} must be >= 1")
    if factor == 1:
        out = Tensor(x.data.copy())
        return _trace(out, (x,), lambda g: (g,), "upsample")
    _, _, h, w = x.data.shape
    ry = _bilinear_cached(h, factor, x.data.dtype)
    rx = _bilinear_cached(w, factor, x.data.dtype)
    out = Tensor(np.matmul(np.matmul(ry, x.data), rx.T))

    def bwd(g):
        return (np.matmul(np.matmul(ry.T, g), rx),)

    return _trace(out, (x,), bwd, "upsample")
