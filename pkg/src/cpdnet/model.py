"""CPD-Net: CPDC backbone, MSEM skips, DRC decoders, ConvNeXt-V2 lateral branch."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .cpdc import CpdcBlock
from .nn import (
    BatchNorm2d,
    Conv2d,
    GlobalResponseNorm,
    LayerNorm2d,
    Module,
    count_parameters,
)
from .tensor import Tensor

CHANNEL_CHOICES = {16: "tiny", 32: "small", 64: "normal"}
STAGE_MULTIPLIERS = (1, 2, 4, 4)
DILATIONS = (1, 2, 3, 4)


@dataclass(frozen=True)
class BackboneConfig:
    base_channels: int = 16
    blocks_per_stage: int = 4
    se_reduction: int = 16

    def __post_init__(self):
        if self.base_channels not in CHANNEL_CHOICES:
            raise ValueError(f"base_channels must be one of {sorted(CHANNEL_CHOICES)}, got {self.base_channels}")
        for c in self.stage_channels:
            if c % 4:
                raise ValueError(f"stage width {c} is not divisible by 4")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return tuple(m * self.base_channels for m in STAGE_MULTIPLIERS)

    @property
    def name(self) -> str:
        return CHANNEL_CHOICES[self.base_channels]


class SEBlock(Module):
    """Squeeze-and-excitation gate."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = Conv2d(channels, hidden, 1, rng)
        self.fc2 = Conv2d(hidden, channels, 1, rng)

    def gate(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.fc2(ops.relu(self.fc1(ops.global_avg_pool(x)))))

    def forward(self, x: Tensor) -> Tensor:
        return ops.channel_scale(x, self.gate(x))


class MsemBranch(Module):
    def __init__(self, channels: int, dilation: int, rng: np.random.Generator):
        super().__init__()
        quarter = channels // 4
        self.reduce = Conv2d(channels, quarter, 1, rng)
        self.context = Conv2d(quarter, quarter, 3, rng, dilation=dilation, padding=dilation)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.context(ops.relu(self.reduce(x))))


class MsemModule(Module):
    """Multi-scale enhancement: dilated branches, 1x1 fusion, SE gate, residual."""

    def __init__(self, channels: int, rng: np.random.Generator, se_reduction: int = 16):
        super().__init__()
        if channels % 4:
            raise ValueError(f"MSEM needs channels divisible by 4, got {channels}")
        self.channels = channels
        self.branches = [MsemBranch(channels, r, rng) for r in DILATIONS]
        self.fuse = Conv2d(channels, channels, 1, rng)
        self.se = SEBlock(channels, se_reduction, rng)

    def branch_outputs(self, x: Tensor) -> list[Tensor]:
        return [b(x) for b in self.branches]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"MSEM built for {self.channels} channels, got input {x.shape}")
        fused = self.fuse(ops.concat_channels(self.branch_outputs(x)))
        return ops.add(x, self.se(fused))


class DrcDecoder(Module):
    """Dual-residual decoder.

    Two sub-blocks of [3x3, 1x1] conv-BN-ReLU. The first residual spans
    sub-block one, the second spans the whole decoder; a 1x1 projection
    is used on the skip path when input and output widths differ.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        # convs feeding BatchNorm carry no bias (it would be cancelled)
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, bias=False)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 1, rng, bias=False)
        self.bn2 = BatchNorm2d(out_channels)
        self.conv3 = Conv2d(out_channels, out_channels, 3, rng, bias=False)
        self.bn3 = BatchNorm2d(out_channels)
        self.conv4 = Conv2d(out_channels, out_channels, 1, rng, bias=False)
        self.bn4 = BatchNorm2d(out_channels)
        self.proj = Conv2d(in_channels, out_channels, 1, rng) if in_channels != out_channels else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"DRC decoder expects {self.in_channels} channels, got input {x.shape}")
        skip = x if self.proj is None else self.proj(x)
        y = ops.relu(self.bn1(self.conv1(x)))
        y = ops.relu(self.bn2(self.conv2(y)))
        r1 = ops.add(y, skip)
        y = ops.relu(self.bn3(self.conv3(r1)))
        y = ops.relu(self.bn4(self.conv4(y)))
        return ops.add(y, skip)


class ConvNextV2Block(Module):
    def __init__(self, channels: int, rng: np.random.Generator, expansion: int = 4):
        super().__init__()
        self.dwconv = Conv2d(channels, channels, 7, rng, padding=3, groups=channels)
        self.norm = LayerNorm2d(channels)
        self.pwconv1 = Conv2d(channels, expansion * channels, 1, rng)
        self.grn = GlobalResponseNorm(expansion * channels)
        self.pwconv2 = Conv2d(expansion * channels, channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        y = self.norm(self.dwconv(x))
        y = self.grn(ops.gelu(self.pwconv1(y)))
        return ops.add(x, self.pwconv2(y))


class Stage(Module):
    def __init__(self, in_channels: int, channels: int, blocks: int, rng: np.random.Generator, downsample: bool):
        super().__init__()
        self.down = Conv2d(in_channels, channels, 3, rng, stride=2, padding=1) if downsample else None
        self.blocks = [CpdcBlock(channels, rng) for _ in range(blocks)]

    def forward(self, x: Tensor) -> Tensor:
        if self.down is not None:
            x = self.down(x)
        for block in self.blocks:
            x = block(x)
        return x


class CpdNetModel(Module):
    def __init__(self, config: BackboneConfig, seed: int):
        super().__init__()
        self.config = config
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        widths = config.stage_channels
        c = config.base_channels
        self.stem = Conv2d(3, c, 3, rng)
        self.stages = [
            Stage(widths[max(i - 1, 0)] if i else c, widths[i], config.blocks_per_stage, rng, downsample=i > 0)
            for i in range(4)
        ]
        self.msems = [MsemModule(w, rng, config.se_reduction) for w in widths]
        # decoder i maps stage-i width to the width of the next shallower stream
        out_widths = (widths[0],) + widths[:-1]
        self.decoders = [DrcDecoder(widths[i], out_widths[i], rng) for i in range(4)]
        self.lateral_embed = Conv2d(3, c, 3, rng)
        self.lateral = ConvNextV2Block(c, rng)
        self.head = Conv2d(2 * c, 1, 1, rng)
        self.assign_names()

    def forward(self, image: Tensor, return_features: bool = False):
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"CPD-Net expects an N,3,H,W image, got {image.shape}")
        h, w = image.shape[2:]
        if h % 8 or w % 8:
            pad_h, pad_w = (-h) % 8, (-w) % 8
            raise ValueError(
                f"image size {h}x{w} must be divisible by 8; pad by {pad_h} rows and {pad_w} columns"
            )
        x = self.stem(image)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        skips = [m(f) for m, f in zip(self.msems, feats)]
        y = self.decoders[3](skips[3])
        for i in (2, 1, 0):
            y = self.decoders[i](ops.add(skips[i], ops.upsample_bilinear(y, 2)))
        lateral = self.lateral(self.lateral_embed(image))
        out = ops.sigmoid(self.head(ops.concat_channels([lateral, y])))
        if return_features:
            return out, feats
        return out


def build_model(config: BackboneConfig | int = 16, seed: int = 0) -> CpdNetModel:
    """Construct CPD-Net deterministically from ``(config, seed)``."""
    if isinstance(config, int):
        config = BackboneConfig(base_channels=config)
    return CpdNetModel(config, seed)


def model_forward(model: CpdNetModel, image: Tensor) -> Tensor:
    return model(image)


def msem_forward(module: MsemModule, x: Tensor) -> Tensor:
    return module(x)


def drc_forward(decoder: DrcDecoder, x: Tensor) -> Tensor:
    return decoder(x)


def stage_shapes(config: BackboneConfig, height: int, width: int) -> list[tuple[int, int, int]]:
    """(channels, H, W) of each backbone stage output for a given input size."""
    return [(c, height >> i, width >> i) for i, c in enumerate(config.stage_channels)]


__all__ = [
    "BackboneConfig",
    "ConvNextV2Block",
    "CpdNetModel",
    "DrcDecoder",
    "MsemModule",
    "SEBlock",
    "build_model",
    "count_parameters",
    "drc_forward",
    "model_forward",
    "msem_forward",
    "stage_shapes",
]
