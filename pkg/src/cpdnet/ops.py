"""Differentiable operations on :class:`~cpdnet.tensor.Tensor`.

Binary elementwise ops require operands of identical shape; a Python scalar
or a 0-d array/tensor is the only operand allowed to broadcast. Plain numpy
arrays are accepted as constants (no gradient).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715

PADDING_MODES = ("zeros", "replicate")


# ---------------------------------------------------------------------------
# operand handling
# ---------------------------------------------------------------------------
def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _binary_operands(a, b, op: str) -> tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    ta = _as_tensor(a, like)
    tb = _as_tensor(b, like)
    if ta.shape != tb.shape and ta.ndim != 0 and tb.ndim != 0:
        raise ValueError(f"{op}: operand shapes differ: {ta.shape} vs {tb.shape}")
    return ta, tb


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    # only the 0-d broadcast is permitted
    return np.asarray(grad.sum(), dtype=grad.dtype).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------
def add(a, b) -> Tensor:
    ta, tb = _binary_operands(a, b, "add")

    def backward(g):
        return _reduce_to(g, ta.shape), _reduce_to(g, tb.shape)

    return Tensor._from_op(ta.data + tb.data, (ta, tb), backward)


def sub(a, b) -> Tensor:
    ta, tb = _binary_operands(a, b, "sub")

    def backward(g):
        return _reduce_to(g, ta.shape), _reduce_to(-g, tb.shape)

    return Tensor._from_op(ta.data - tb.data, (ta, tb), backward)


def mul(a, b) -> Tensor:
    ta, tb = _binary_operands(a, b, "mul")

    def backward(g):
        ga = _reduce_to(g * tb.data, ta.shape) if ta.requires_grad else None
        gb = _reduce_to(g * ta.data, tb.shape) if tb.requires_grad else None
        return ga, gb

    return Tensor._from_op(ta.data * tb.data, (ta, tb), backward)


def div(a, b) -> Tensor:
    ta, tb = _binary_operands(a, b, "div")
    out = ta.data / tb.data

    def backward(g):
        ga = _reduce_to(g / tb.data, ta.shape) if ta.requires_grad else None
        gb = _reduce_to(-g * out / tb.data, tb.shape) if tb.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (ta, tb), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = a.dtype.type(factor)
    return Tensor._from_op(a.data * factor, (a,), lambda g: (g * factor,))


def power(a: Tensor, exponent: float) -> Tensor:
    """``a ** exponent`` for a constant real exponent (a >= 0 for fractional ones)."""
    exponent = float(exponent)
    out = np.power(a.data, a.dtype.type(exponent))

    def backward(g):
        if exponent == 0.0:
            return (np.zeros_like(g),)
        base = np.power(a.data, a.dtype.type(exponent - 1.0))
        return (g * a.dtype.type(exponent) * base,)

    return Tensor._from_op(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def clamp(a: Tensor, low: float, high: float) -> Tensor:
    out = np.clip(a.data, low, high)
    inside = (a.data >= low) & (a.data <= high)
    return Tensor._from_op(out, (a,), lambda g: (g * inside,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._from_op(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    dt = x.dtype.type
    inner = dt(_SQRT_2_OVER_PI) * (x + dt(_GELU_C) * x * x * x)
    t = np.tanh(inner)
    out = dt(0.5) * x * (dt(1.0) + t)

    def backward(g):
        dinner = dt(_SQRT_2_OVER_PI) * (dt(1.0) + dt(3.0 * _GELU_C) * x * x)
        d = dt(0.5) * (dt(1.0) + t) + dt(0.5) * x * (dt(1.0) - t * t) * dinner
        return (g * d,)

    return Tensor._from_op(out, (a,), backward)


_ELEMENTWISE = {
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "add": add,
    "mul": mul,
    "scale": scale,
}


def elementwise(op_kind: str, *args, **kwargs) -> Tensor:
    """Dispatch one of ``relu, gelu, sigmoid, add, mul, scale`` by name."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------
def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    axes = _normalize_axes(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def backward(g):
        return (np.broadcast_to(np.reshape(g, kept_shape), a.shape),)

    return Tensor._from_op(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return scale(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ConvSpec:
    """Shape contract of a 2-D convolution."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    groups: int = 1
    padding_mode: str = "zeros"

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "stride", "dilation", "groups"):
            if getattr(self, field) < 1:
                raise ValueError(f"ConvSpec.{field} must be positive, got {getattr(self, field)}")
        if self.padding < 0:
            raise ValueError(f"ConvSpec.padding must be non-negative, got {self.padding}")
        if len(self.kernel) != 2 or min(self.kernel) < 1:
            raise ValueError(f"ConvSpec.kernel must be two positive sizes, got {self.kernel}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"in_channels={self.in_channels} and out_channels={self.out_channels} "
                f"must be divisible by groups={self.groups}"
            )
        if self.padding_mode not in PADDING_MODES:
            raise ValueError(f"padding_mode must be one of {PADDING_MODES}, got {self.padding_mode!r}")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        kh, kw = self.kernel
        ho = (height + 2 * self.padding - self.dilation * (kh - 1) - 1) // self.stride + 1
        wo = (width + 2 * self.padding - self.dilation * (kw - 1) - 1) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ValueError(
                f"conv output would be empty ({ho}x{wo}) for input {height}x{width} with "
                f"kernel={self.kernel}, padding={self.padding}, dilation={self.dilation}, stride={self.stride}"
            )
        return ho, wo


def _pad(x: np.ndarray, p: int, mode: str) -> np.ndarray:
    if p == 0:
        return x
    width = ((0, 0), (0, 0), (p, p), (p, p))
    return np.pad(x, width, mode="constant" if mode == "zeros" else "edge")


def _unpad(g: np.ndarray, p: int, mode: str) -> np.ndarray:
    if p == 0:
        return g
    if mode == "zeros":
        return g[:, :, p:-p, p:-p]
    # replicate: fold the padded border back onto the edge rows/columns
    gw = g[:, :, :, p:-p].copy()
    gw[:, :, :, 0] += g[:, :, :, :p].sum(axis=3)
    gw[:, :, :, -1] += g[:, :, :, -p:].sum(axis=3)
    gh = gw[:, :, p:-p, :].copy()
    gh[:, :, 0, :] += gw[:, :, :p, :].sum(axis=2)
    gh[:, :, -1, :] += gw[:, :, -p:, :].sum(axis=2)
    return gh


def pad2d(x: Tensor, padding: int, mode: str = "zeros") -> Tensor:
    if mode not in PADDING_MODES:
        raise ValueError(f"padding mode must be one of {PADDING_MODES}, got {mode!r}")
    return Tensor._from_op(_pad(x.data, padding, mode), (x,), lambda g: (_unpad(g, padding, mode),))


def _window_slices(i: int, j: int, ho: int, wo: int, stride: int, dilation: int):
    hi, wj = i * dilation, j * dilation
    return (
        slice(None),
        slice(None),
        slice(hi, hi + stride * (ho - 1) + 1, stride),
        slice(wj, wj + stride * (wo - 1) + 1, stride),
    )


def _im2col(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int, stride: int, dilation: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh * kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i * kw + j] = xp[_window_slices(i, j, ho, wo, stride, dilation)]
    return cols


def _col2im(gcols: np.ndarray, xp_shape, kh: int, kw: int, ho: int, wo: int, stride: int, dilation: int):
    gxp = np.zeros(xp_shape, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[_window_slices(i, j, ho, wo, stride, dilation)] += gcols[:, :, i * kw + j]
    return gxp


def _check_conv_operands(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be 4-D (N, C, H, W), got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("conv2d: batch dimension is empty")
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels but in_channels={spec.in_channels}")
    if tuple(weight.shape) != spec.weight_shape:
        names = ("out_channels", "in_channels/groups", "kernel height", "kernel width")
        for name, got, want in zip(names, weight.shape, spec.weight_shape):
            if got != want:
                raise ValueError(f"conv2d: weight {name} is {got}, expected {want} (weight shape {weight.shape})")
        raise ValueError(f"conv2d: weight shape {weight.shape} != {spec.weight_shape}")
    if bias is not None and tuple(bias.shape) != (spec.out_channels,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({spec.out_channels},)")


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    spec: ConvSpec | None = None,
    *,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
    padding_mode: str = "zeros",
    cell_permutation: np.ndarray | None = None,
) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    When ``spec`` is omitted it is derived from the weight shape and the
    keyword arguments. ``cell_permutation`` (length kh*kw, 0-based) replaces
    each unfolded window column ``x_i`` by the difference ``x_i - x_perm[i]``
    before the weights are applied; this is the pixel-difference form used by
    the cycle difference layers.
    """
    if spec is None:
        o, cg, kh, kw = weight.shape
        spec = ConvSpec(cg * groups, o, (kh, kw), stride, padding, dilation, groups, padding_mode)
    _check_conv_operands(x, weight, bias, spec)

    n, c, h, w = x.shape
    kh, kw = spec.kernel
    ho, wo = spec.output_size(h, w)
    g_count = spec.groups
    o = spec.out_channels
    dtype = np.result_type(x.dtype, weight.dtype)
    xd = x.data.astype(dtype, copy=False)
    wd = weight.data.astype(dtype, copy=False)
    xp = _pad(xd, spec.padding, spec.padding_mode)

    depthwise = g_count == c == o and g_count > 1 and cell_permutation is None
    if depthwise:
        out = _depthwise_forward(xp, wd, kh, kw, ho, wo, spec)
        cols = None
    else:
        cols = _im2col(xp, kh, kw, ho, wo, spec.stride, spec.dilation)
        if cell_permutation is not None:
            perm = np.asarray(cell_permutation, dtype=np.intp)
            if perm.shape != (kh * kw,):
                raise ValueError(f"cell_permutation must have length {kh * kw}")
            cols = cols - cols[:, :, perm]
        cg = c // g_count
        k = cg * kh * kw
        cols_m = cols.reshape(n, g_count, k, ho * wo)
        wm = wd.reshape(g_count, o // g_count, k)
        out = np.matmul(wm[None], cols_m).reshape(n, o, ho, wo)
    if bias is not None:
        out = out + bias.data.astype(dtype, copy=False).reshape(1, o, 1, 1)

    def backward(gout):
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = gout.sum(axis=(0, 2, 3))
        if depthwise:
            gxp, gw = _depthwise_backward(gout, xp, wd, kh, kw, ho, wo, spec, x.requires_grad, weight.requires_grad)
            if gxp is not None:
                gx = _unpad(gxp, spec.padding, spec.padding_mode)
            return gx, gw, gb
        cg = c // g_count
        k = cg * kh * kw
        gm = gout.reshape(n, g_count, o // g_count, ho * wo)
        cols_m = cols.reshape(n, g_count, k, ho * wo)
        wm = wd.reshape(g_count, o // g_count, k)
        if weight.requires_grad:
            gw = np.matmul(gm, cols_m.transpose(0, 1, 3, 2)).sum(axis=0).reshape(weight.shape)
        if x.requires_grad:
            gcols = np.matmul(wm.transpose(0, 2, 1)[None], gm).reshape(n, c, kh * kw, ho, wo)
            if cell_permutation is not None:
                inv = np.argsort(np.asarray(cell_permutation, dtype=np.intp))
                gcols = gcols - gcols[:, :, inv]
            gxp = _col2im(gcols, xp.shape, kh, kw, ho, wo, spec.stride, spec.dilation)
            gx = _unpad(gxp, spec.padding, spec.padding_mode)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


def _depthwise_forward(xp, wd, kh, kw, ho, wo, spec):
    n, c = xp.shape[:2]
    out = np.zeros((n, c, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            out += wd[:, 0, i, j].reshape(1, c, 1, 1) * xp[_window_slices(i, j, ho, wo, spec.stride, spec.dilation)]
    return out


def _depthwise_backward(gout, xp, wd, kh, kw, ho, wo, spec, need_x, need_w):
    c = xp.shape[1]
    gxp = np.zeros_like(xp) if need_x else None
    gw = np.zeros_like(wd) if need_w else None
    for i in range(kh):
        for j in range(kw):
            sl = _window_slices(i, j, ho, wo, spec.stride, spec.dilation)
            if need_w:
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", gout, xp[sl])
            if need_x:
                gxp[sl] += gout * wd[:, 0, i, j].reshape(1, c, 1, 1)
    return gxp, gw


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------
def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode the running statistics are updated in place, with the
    unbiased batch variance entering the running variance.
    """
    if x.ndim != 4:
        raise ValueError(f"batch_norm: input must be 4-D, got {x.shape}")
    n, c, h, w = x.shape
    if n * h * w == 0:
        raise ValueError("batch_norm: zero-size batch")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm: gamma/beta must have shape ({c},), got {gamma.shape}/{beta.shape}")
    dt = x.dtype.type
    count = n * h * w
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mu.reshape(1, c, 1, 1)
        var = (centered * centered).mean(axis=(0, 2, 3))
        unbiased = var * (count / max(count - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
        centered = x.data - mu.reshape(1, c, 1, 1)
    inv = (dt(1.0) / np.sqrt(var + dt(eps))).astype(x.dtype, copy=False)
    xhat = centered * inv.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(1, c, 1, 1)
            if training:
                s1 = dxhat.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                gx = (inv.reshape(1, c, 1, 1) / dt(count)) * (dt(count) * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv.reshape(1, c, 1, 1)
        return gx, gg, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward)


def layer_norm_channels(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each (n, h, w) position over the channel axis."""
    n, c, h, w = x.shape
    dt = x.dtype.type
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = dt(1.0) / np.sqrt(var + dt(eps))
    xhat = centered * inv
    wv = weight.data.reshape(1, c, 1, 1)
    out = xhat * wv + bias.data.reshape(1, c, 1, 1)

    def backward(g):
        gw = (g * xhat).sum(axis=(0, 2, 3)) if weight.requires_grad else None
        gbias = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * wv
            s1 = dxhat.mean(axis=1, keepdims=True)
            s2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            gx = inv * (dxhat - s1 - xhat * s2)
        return gx, gw, gbias

    return Tensor._from_op(out, (x, weight, bias), backward)


def global_response_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """ConvNeXt-V2 global response normalization.

    ``y = gamma * (x * N) + beta + x`` with ``N_c = G_c / (mean_c G + eps)``
    and ``G_c`` the spatial L2 norm of channel ``c``.
    """
    n, c, h, w = x.shape
    dt = x.dtype.type
    xd = x.data
    gnorm = np.sqrt((xd * xd).sum(axis=(2, 3), keepdims=True))  # (n, c, 1, 1)
    denom = gnorm.mean(axis=1, keepdims=True) + dt(eps)  # (n, 1, 1, 1)
    nx = gnorm / denom
    gv = gamma.data.reshape(1, c, 1, 1)
    out = gv * (xd * nx) + beta.data.reshape(1, c, 1, 1) + xd

    def backward(g):
        ggamma = (g * xd * nx).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = g * (gv * nx + dt(1.0))
            a = gv * (g * xd).sum(axis=(2, 3), keepdims=True)  # dL/dN
            dgn = a / denom - (a * gnorm).sum(axis=1, keepdims=True) / (denom * denom) / dt(c)
            safe = np.where(gnorm > 0, gnorm, dt(1.0))
            gx = gx + dgn * xd / safe
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# resampling, concatenation, pooling, gating
# ---------------------------------------------------------------------------
def bilinear_matrix(size: int, factor: int, dtype=np.float32) -> np.ndarray:
    """(size*factor, size) interpolation matrix, align_corners=False."""
    out = size * factor
    mat = np.zeros((out, size), dtype=np.float64)
    for dst in range(out):
        src = max((dst + 0.5) / factor - 0.5, 0.0)
        i0 = min(int(math.floor(src)), size - 1)
        i1 = min(i0 + 1, size - 1)
        frac = src - i0
        mat[dst, i0] += 1.0 - frac
        mat[dst, i1] += frac
    return mat.astype(dtype)


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"upsample factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return Tensor._from_op(x.data.copy(), (x,), lambda g: (g,))
    _, _, h, w = x.shape
    ah = bilinear_matrix(h, factor, x.dtype)
    aw = bilinear_matrix(w, factor, x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)

    def backward(g):
        return (np.matmul(np.matmul(ah.T, g), aw),)

    return Tensor._from_op(out, (x,), backward)


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    if not inputs:
        raise ValueError("concat_channels: empty input list")
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ValueError(f"concat_channels: shape {t.shape} does not match N,H,W of {ref}")
    sizes = [t.shape[1] for t in inputs]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in inputs], axis=1)

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(inputs)))

    return Tensor._from_op(out, tuple(inputs), backward)


def split_channels(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if np.sum(sizes) != x.shape[1]:
        raise ValueError(f"split sizes {list(sizes)} do not sum to {x.shape[1]} channels")
    parts = []
    start = 0
    for size in sizes:
        lo, hi = start, start + size

        def backward(g, lo=lo, hi=hi):
            full = np.zeros_like(x.data)
            full[:, lo:hi] = g
            return (full,)

        parts.append(Tensor._from_op(x.data[:, lo:hi].copy(), (x,), backward))
        start = hi
    return parts


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ValueError(f"global_avg_pool: expected N,C,H,W with H,W >= 1, got {x.shape}")
    _, _, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    inv = x.dtype.type(1.0 / (h * w))
    return Tensor._from_op(out, (x,), lambda g: (np.broadcast_to(g * inv, x.shape),))


def channel_scale(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply each channel of ``x`` (N,C,H,W) by ``gate`` (N,C,1,1)."""
    if gate.shape != (x.shape[0], x.shape[1], 1, 1):
        raise ValueError(f"channel_scale: gate shape {gate.shape} incompatible with input {x.shape}")

    def backward(g):
        gx = g * gate.data if x.requires_grad else None
        gg = (g * x.data).sum(axis=(2, 3), keepdims=True) if gate.requires_grad else None
        return gx, gg

    return Tensor._from_op(x.data * gate.data, (x, gate), backward)


def crop(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        full[:, :, top:top + height, left:left + width] = g
        return (full,)

    return Tensor._from_op(x.data[:, :, top:top + height, left:left + width].copy(), (x,), backward)
