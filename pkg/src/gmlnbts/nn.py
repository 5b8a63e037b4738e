"""Parameter containers and the layers GMLN-BTS is assembled from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .errors import SpecError
from .tensor import Tensor, batch_norm, group_norm, layer_norm, linear
from .volume_ops import ConvSpec, conv3d, conv_transpose3d


class Module:
    """Minimal parameter registry with torch-like attribute auto-registration.

    Attribute assignment of a ``Tensor`` with ``requires_grad`` registers a
    parameter; assignment of a ``Module`` registers a child. Buffers hold
    persistent non-trainable state (e.g. running statistics).
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield f"{prefix}{name}", p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield f"{prefix}{name}", self._buffers[name]
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def param_count(self) -> int:
        """Total trainable scalar count; the number quoted for model size."""
        names = [n for n, _ in self.named_parameters()]
        if len(names) != len(set(names)):
            raise SpecError("duplicate parameter names in registry")
        return sum(p.data.size for p in self.parameters())


def _uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Conv3d(Module):
    """3D convolution layer; weights uniform in +-1/sqrt(fan_in), bias zero."""

    def __init__(self, in_channels: int, out_channels: int, kernel=3, stride=1,
                 padding=0, bias: bool = True, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        super().__init__()
        self.spec = ConvSpec.conv(in_channels, out_channels, kernel, stride, padding)
        rng = rng or np.random.default_rng()
        fan_in = in_channels * int(np.prod(self.spec.kernel))
        self.weight = _uniform_fan_in(rng, (out_channels, in_channels, *self.spec.kernel), fan_in, dtype)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)


class ConvTranspose3d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel, stride,
                 padding=0, output_padding=0, bias: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        self.spec = ConvSpec.transpose(in_channels, out_channels, kernel, stride,
                                       padding, output_padding)
        rng = rng or np.random.default_rng()
        fan_in = in_channels * int(np.prod(self.spec.kernel))
        self.weight = _uniform_fan_in(rng, (in_channels, out_channels, *self.spec.kernel), fan_in, dtype)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose3d(x, self.weight, self.bias, self.spec.stride,
                                self.spec.padding, self.spec.output_padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng()
        self.weight = _uniform_fan_in(rng, (out_features, in_features), in_features, dtype)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        if channels % groups:
            raise SpecError(f"channels {channels} not divisible by groups {groups}")
        self.groups = groups
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(x, self.groups, self.gamma, self.beta, self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, axis: int = -1, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.axis = axis
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps, self.axis)


class BatchNorm3d(Module):
    """Channel-wise batch normalization with persistent running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        self.register_buffer("stats_steps", np.zeros(1, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            self.stats_steps[0] += 1
        return batch_norm(
            x, self.gamma, self.beta,
            self.running_mean, self.running_var,
            momentum=self.momentum, eps=self.eps,
            training=self.training,
            stats_initialized=bool(self.stats_steps[0] > 0),
        )
