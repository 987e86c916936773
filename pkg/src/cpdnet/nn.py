"""Minimal module tree: parameter discovery, train/eval mode, state dicts."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .ops import ConvSpec
from .tensor import DEFAULT_DTYPE, Parameter, Tensor


class Module:
    """Base class; child modules and parameters are discovered from attributes."""

    training: bool = True

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # -- tree traversal -------------------------------------------------------
    def _children(self) -> Iterator[tuple[str, "Module | Parameter"]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Module, Parameter)):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                singular = key[:-1]
                for i, v in enumerate(value):
                    yield (f"{singular}{i + 1}" if singular in _NUMBERED else f"{key}.{i}"), v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(path + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, buf in self._buffers.items():
            yield f"{prefix}{key}", buf
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{key}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    # -- modes ----------------------------------------------------------------
    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- state ----------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = [k for k in list(own) + list(bufs) if k not in state]
        if missing:
            raise KeyError(f"state is missing entries: {missing[:5]}{'...' if len(missing) > 5 else ''}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} does not match parameter shape {p.shape}")
            p.data = value.astype(p.dtype, copy=True)
        for name, buf in bufs.items():
            value = np.asarray(state[name])
            if value.shape != buf.shape:
                raise ValueError(f"{name}: shape {value.shape} does not match buffer shape {buf.shape}")
            buf[...] = value


# list attributes "stages", "blocks", ... name their children "stage1", "block1", ...
_NUMBERED = ("stage", "block", "msem", "decoder", "branch")


def count_parameters(module: Module | list) -> int:
    params = module.parameters() if isinstance(module, Module) else list(module)
    return int(sum(p.size for p in params))


def kaiming_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Kaiming-uniform with negative slope sqrt(5) (bound ``1/sqrt(fan_in)``).

    The ReLU gain (bound ``sqrt(6/fan_in)``) lets an untrained model's
    activations grow ~10x per stage in inference mode, saturating the output.
    """
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DEFAULT_DTYPE)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        *,
        stride: int = 1,
        padding: int | None = None,
        dilation: int = 1,
        groups: int = 1,
        bias: bool = True,
        padding_mode: str = "zeros",
    ):
        super().__init__()
        if padding is None:
            padding = dilation * (kernel_size - 1) // 2
        self.spec = ConvSpec(
            in_channels, out_channels, (kernel_size, kernel_size), stride, padding, dilation, groups, padding_mode
        )
        fan_in = (in_channels // groups) * kernel_size * kernel_size
        self.weight = Parameter(kaiming_uniform(self.spec.weight_shape, fan_in, rng))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.spec)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self._buffers["running_mean"] = np.zeros(channels, dtype=DEFAULT_DTYPE)
        self._buffers["running_var"] = np.ones(channels, dtype=DEFAULT_DTYPE)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x,
            self.weight,
            self.bias,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            self.training,
            self.momentum,
            self.eps,
        )


class LayerNorm2d(Module):
    """Channel-wise LayerNorm for N,C,H,W tensors."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm_channels(x, self.weight, self.bias, self.eps)


class GlobalResponseNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.gamma = Parameter(np.zeros(channels))
        self.beta = Parameter(np.zeros(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.global_response_norm(x, self.gamma, self.beta, self.eps)


class ConvBnRelu(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel_size, rng)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))
