"""Hierarchical transformer bottleneck with spatial-reduction attention.

Each stage embeds the incoming volume with a strided convolution, runs
pre-norm attention/MLP blocks on the token sequence, and returns the
tokens folded back into volume form. Keys and values can be pooled by a
strided convolution (reduction ratio r) to keep attention affordable on
volumetric token counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, SpecError
from ..nn import Conv3d, LayerNorm, Linear, Module
from ..tensor import Tensor, add, leaky_relu, matmul, mul, reshape, softmax, transpose


@dataclass(frozen=True)
class StageSpec:
    dim: int
    heads: int
    blocks: int
    embed_kernel: int
    embed_stride: int
    embed_pad: int
    sr_ratio: int = 1
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.dim % self.heads:
            raise SpecError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.sr_ratio < 1 or self.embed_stride < 1:
            raise SpecError("ratios and strides must be >= 1")


def volume_to_tokens(x: Tensor) -> Tensor:
    b, c, d, h, w = x.shape
    return transpose(reshape(x, (b, c, d * h * w)), (0, 2, 1))


def tokens_to_volume(t: Tensor, spatial: tuple[int, int, int]) -> Tensor:
    b, n, c = t.shape
    return reshape(transpose(t, (0, 2, 1)), (b, c, *spatial))


class SpatialReductionAttention(Module):
    def __init__(self, spec: StageSpec, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.spec = spec
        dim = spec.dim
        self.q = Linear(dim, dim, rng=rng, dtype=dtype)
        self.kv = Linear(dim, 2 * dim, rng=rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng=rng, dtype=dtype)
        if spec.sr_ratio > 1:
            self.sr = Conv3d(dim, dim, spec.sr_ratio, stride=spec.sr_ratio, rng=rng, dtype=dtype)
            self.sr_norm = LayerNorm(dim, dtype=dtype)

    def __call__(self, x: Tensor, spatial: tuple[int, int, int]) -> Tensor:
        b, n, dim = x.shape
        heads = self.spec.heads
        dk = dim // heads
        q = transpose(reshape(self.q(x), (b, n, heads, dk)), (0, 2, 1, 3))

        source = x
        if self.spec.sr_ratio > 1:
            if any(s % self.spec.sr_ratio for s in spatial):
                raise ShapeError(f"token grid {spatial} not divisible by reduction {self.spec.sr_ratio}")
            pooled = self.sr(tokens_to_volume(x, spatial))
            source = self.sr_norm(volume_to_tokens(pooled))
        kv = self.kv(source)
        nr = kv.shape[1]
        k = transpose(reshape(kv[:, :, :dim], (b, nr, heads, dk)), (0, 2, 3, 1))
        v = transpose(reshape(kv[:, :, dim:], (b, nr, heads, dk)), (0, 2, 1, 3))

        scores = mul(matmul(q, k), 1.0 / np.sqrt(dk))
        attended = matmul(softmax(scores, axis=-1), v)
        merged = reshape(transpose(attended, (0, 2, 1, 3)), (b, n, dim))
        return self.proj(merged)


class TransformerBlock(Module):
    def __init__(self, spec: StageSpec, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.norm_attn = LayerNorm(spec.dim, dtype=dtype)
        self.attn = SpatialReductionAttention(spec, rng, dtype)
        self.norm_mlp = LayerNorm(spec.dim, dtype=dtype)
        self.expand = Linear(spec.dim, spec.dim * spec.mlp_ratio, rng=rng, dtype=dtype)
        self.contract = Linear(spec.dim * spec.mlp_ratio, spec.dim, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor, spatial: tuple[int, int, int]) -> Tensor:
        x = add(x, self.attn(self.norm_attn(x), spatial))
        return add(x, self.contract(leaky_relu(self.expand(self.norm_mlp(x)), 0.01)))


class TransformerStage(Module):
    """Strided patch embedding followed by attention blocks, in volume form."""

    def __init__(self, in_channels: int, spec: StageSpec, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.spec = spec
        self.embed = Conv3d(in_channels, spec.dim, spec.embed_kernel,
                            stride=spec.embed_stride, padding=spec.embed_pad,
                            rng=rng, dtype=dtype)
        self.block_list = [TransformerBlock(spec, rng, dtype) for _ in range(spec.blocks)]
        for i, blk in enumerate(self.block_list):
            setattr(self, f"block_{i}", blk)
        self.norm_out = LayerNorm(spec.dim, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if any(s % self.spec.embed_stride for s in x.shape[2:]):
            raise ShapeError(
                f"spatial dims {x.shape[2:]} not divisible by embed stride {self.spec.embed_stride}")
        vol = self.embed(x)
        spatial = vol.shape[2:]
        tokens = volume_to_tokens(vol)
        for blk in self.block_list:
            tokens = blk(tokens, spatial)
        return tokens_to_volume(self.norm_out(tokens), spatial)
