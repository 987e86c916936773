"""Cycle pixel difference convolutions.

A CPDC operator evaluates ``sum_i (x_i - x_pi(i)) * w_i`` over each 3x3
window, where the cells are numbered row-major::

    x1 x2 x3
    x4 x5 x6
    x7 x8 x9

and ``pi`` is one of four fixed permutations (horizontal, vertical, diagonal,
cross). Collecting the coefficient of each ``x_j`` turns the operator into a
plain convolution with the difference kernel ``w'_j = w_j - w_{pi^-1(j)}``.

Layers pad with edge replication so that a spatially constant input is
rejected exactly, border included. The training forward applies the
differences to the unfolded input columns (bit-exact zeros on constant
patches); :meth:`CpdcLayer.folded_weight` gives the equivalent standard
kernel for deployment.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import nn, ops
from .nn import BatchNorm2d, Conv2d, Module
from .ops import ConvSpec
from .tensor import Parameter, Tensor

VARIANTS = ("h", "v", "d", "c")

# pi(i) for i = 1..9
_MAPPINGS = {
    "h": (2, 3, 1, 5, 6, 4, 8, 9, 7),
    "v": (4, 5, 6, 7, 8, 9, 1, 2, 3),
    "d": (9, 2, 7, 4, 5, 6, 3, 8, 1),
    "c": (1, 8, 3, 6, 5, 4, 7, 2, 9),
}


@dataclass(frozen=True)
class KernelPermutation:
    """Permutation of 3x3 cells defining one CPDC variant (1-based mapping)."""

    variant: str
    mapping: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.mapping) != list(range(1, 10)):
            raise ValueError(f"mapping must be a permutation of 1..9, got {self.mapping}")

    @classmethod
    def of(cls, variant: str) -> "KernelPermutation":
        key = variant.lower()
        if key not in _MAPPINGS:
            raise ValueError(f"unknown CPDC variant {variant!r}; expected one of {VARIANTS}")
        return cls(key, _MAPPINGS[key])

    @cached_property
    def forward_index(self) -> np.ndarray:
        """0-based ``pi``: cell i is differenced against cell ``forward_index[i]``."""
        return np.asarray(self.mapping, dtype=np.intp) - 1

    @cached_property
    def inverse_index(self) -> np.ndarray:
        return np.argsort(self.forward_index)

    @property
    def fixed_cells(self) -> tuple[int, ...]:
        return tuple(i + 1 for i, j in enumerate(self.forward_index) if i == j)

    def difference_matrix(self) -> np.ndarray:
        """9x9 matrix M with ``vec(W') = M @ vec(W)``."""
        m = np.eye(9)
        m[np.arange(9), self.inverse_index] -= 1.0
        return m


def _as_permutation(perm) -> KernelPermutation:
    return perm if isinstance(perm, KernelPermutation) else KernelPermutation.of(perm)


def transform_weights(weight, perm):
    """Difference kernel ``w'_j = w_j - w_{pi^-1(j)}`` over the last two axes.

    Accepts a numpy array of shape (..., 3, 3) or a :class:`Tensor`; for a
    tensor the result stays differentiable with respect to the original kernel.
    """
    perm = _as_permutation(perm)
    inv = perm.inverse_index
    if isinstance(weight, Tensor):
        if weight.shape[-2:] != (3, 3):
            raise ValueError(f"CPDC kernels are 3x3, got trailing shape {weight.shape[-2:]}")
        lead = weight.shape[:-2]
        flat = weight.data.reshape(*lead, 9)
        out = (flat - flat[..., inv]).reshape(weight.shape)
        fwd = perm.forward_index

        def backward(g):
            gf = g.reshape(*lead, 9)
            return ((gf - gf[..., fwd]).reshape(weight.shape),)

        return Tensor._from_op(out, (weight,), backward)
    w = np.asarray(weight)
    if w.shape[-2:] != (3, 3):
        raise ValueError(f"CPDC kernels are 3x3, got trailing shape {w.shape[-2:]}")
    flat = w.reshape(*w.shape[:-2], 9)
    return (flat - flat[..., inv]).reshape(w.shape)


def cpdc_direct(window, weight, perm) -> float:
    """Reference evaluation of one 3x3 window: ``sum_i (x_i - x_pi(i)) * w_i``."""
    perm = _as_permutation(perm)
    x = [float(v) for v in np.asarray(window, dtype=np.float64).reshape(9)]
    w = [float(v) for v in np.asarray(weight, dtype=np.float64).reshape(9)]
    total = 0.0
    for i in range(9):
        j = perm.mapping[i] - 1
        if j != i:
            total += (x[i] - x[j]) * w[i]
    return total


def cpdc_direct_sweep(x: np.ndarray, weight: np.ndarray, perm, padding: int = 1) -> np.ndarray:
    """Slide the reference interpreter over an N,C,H,W array.

    Windows are read from the edge-replicated input, matching the layer's
    padding. ``weight`` has shape (O, C, 3, 3). Returns N,O,H',W' in float64.
    """
    perm = _as_permutation(perm)
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64).reshape(weight.shape[0], weight.shape[1], 9)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), mode="edge")
    n, c, h, wd = x.shape
    fwd = perm.forward_index
    out = np.zeros((n, w.shape[0], h - 2, wd - 2))
    for r in range(h - 2):
        for q in range(wd - 2):
            win = x[:, :, r:r + 3, q:q + 3].reshape(n, c, 9)
            diffs = win - win[:, :, fwd]
            out[:, :, r, q] = np.einsum("nck,ock->no", diffs, w)
    return out


class CpdcLayer(Module):
    """Bias-free 3x3 cycle pixel difference convolution."""

    def __init__(self, in_channels: int, out_channels: int, variant: str, rng: np.random.Generator, bias: bool = False):
        super().__init__()
        self.perm = KernelPermutation.of(variant)
        self.spec = ConvSpec(in_channels, out_channels, (3, 3), 1, 1, 1, 1, "replicate")
        self.weight = Parameter(nn.kaiming_uniform(self.spec.weight_shape, in_channels * 9, rng))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    @property
    def variant(self) -> str:
        return self.perm.variant

    def folded_weight(self) -> Tensor:
        return transform_weights(self.weight, self.perm)

    def forward(self, x: Tensor) -> Tensor:
        return cpdc_forward(self, x)


def cpdc_forward(layer: CpdcLayer, x: Tensor, folded: bool = False) -> Tensor:
    """Apply a CPDC layer.

    ``folded=False`` differences the unfolded input columns and convolves
    with the raw kernel; ``folded=True`` runs a standard convolution with the
    transformed kernel. Both are the same linear map and both route the
    gradient to ``layer.weight``.
    """
    if x.ndim != 4 or x.shape[1] != layer.spec.in_channels:
        raise ValueError(f"CPDC layer expects N,{layer.spec.in_channels},H,W input, got {x.shape}")
    if folded:
        return ops.conv2d(x, layer.folded_weight(), layer.bias, layer.spec)
    return ops.conv2d(x, layer.weight, layer.bias, layer.spec, cell_permutation=layer.perm.forward_index)


class CpdcBlock(Module):
    """Four directional CPDC branches, channel concat, fusion conv, identity skip."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        if channels % 4:
            raise ValueError(f"CPDC block needs channels divisible by 4, got {channels}")
        quarter = channels // 4
        self.channels = channels
        self.cpdc_h = CpdcLayer(channels, quarter, "h", rng)
        self.bn_h = BatchNorm2d(quarter)
        self.cpdc_v = CpdcLayer(channels, quarter, "v", rng)
        self.bn_v = BatchNorm2d(quarter)
        self.cpdc_d = CpdcLayer(channels, quarter, "d", rng)
        self.bn_d = BatchNorm2d(quarter)
        self.cpdc_c = CpdcLayer(channels, quarter, "c", rng)
        self.bn_c = BatchNorm2d(quarter)
        self.fuse = Conv2d(channels, channels, 1, rng)

    def branches(self):
        return [
            (self.cpdc_h, self.bn_h),
            (self.cpdc_v, self.bn_v),
            (self.cpdc_d, self.bn_d),
            (self.cpdc_c, self.bn_c),
        ]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"CPDC block built for {self.channels} channels, got input {x.shape}")
        feats = [ops.relu(bn(layer(x))) for layer, bn in self.branches()]
        return ops.add(x, self.fuse(ops.concat_channels(feats)))


def cpdc_block_forward(block: CpdcBlock, x: Tensor) -> Tensor:
    return block(x)
