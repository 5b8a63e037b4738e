"""Voxel refinement upsampling module (VRUM).

Dual-branch upsampler: a trilinear-plus-refinement branch supplies a
stable, artifact-free base while a multi-scale transposed-convolution
branch recovers high-frequency detail; a pointwise convolution fuses
both. Factor 2 keeps the interpolation stage as identity and lets the
stride-2 transposed refinement do the doubling; factor 4 interpolates
by 2 first so both branches land on the same grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, SpecError
from ..nn import BatchNorm3d, Conv3d, ConvTranspose3d, Module
from ..tensor import Tensor, concat, leaky_relu, relu
from ..volume_ops import trilinear_upsample3d


@dataclass(frozen=True)
class VrumSpec:
    in_channels: int
    out_channels: int
    factor: int

    def __post_init__(self):
        if self.factor not in (2, 4):
            raise SpecError(f"upsample factor must be 2 or 4, got {self.factor}")
        if self.in_channels < 1 or self.out_channels < 2:
            raise SpecError("need in_channels >= 1 and out_channels >= 2")

    @property
    def mid_channels(self) -> int:
        return self.out_channels // 2


class VRUM(Module):
    def __init__(self, spec: VrumSpec, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.spec = spec
        c, c_mid, f = spec.in_channels, spec.mid_channels, spec.factor
        self.refine_conv = Conv3d(c, c, 3, padding=1, rng=rng, dtype=dtype)
        self.refine_up = ConvTranspose3d(c, c, 4, 2, padding=1, rng=rng, dtype=dtype)
        self.detail_small = ConvTranspose3d(c, c_mid, 3, f, padding=1, output_padding=f - 1,
                                            rng=rng, dtype=dtype)
        self.detail_large = ConvTranspose3d(c, c_mid, 5, f, padding=2, output_padding=f - 1,
                                            rng=rng, dtype=dtype)
        self.detail_fuse = Conv3d(2 * c_mid, c_mid, 3, padding=1, rng=rng, dtype=dtype)
        self.detail_norm = BatchNorm3d(c_mid, dtype=dtype)
        self.project = Conv3d(c + c_mid, spec.out_channels, 1, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 5 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected (B,{self.spec.in_channels},d,h,w), got {x.shape}")
        base = trilinear_upsample3d(x, self.spec.factor // 2) if self.spec.factor == 4 else x
        base = self.refine_up(leaky_relu(self.refine_conv(base), 0.01))

        small = self.detail_small(x)
        large = self.detail_large(x)
        if small.shape != large.shape:
            raise ShapeError(f"detail branches disagree on size: {small.shape} vs {large.shape}")
        detail = relu(self.detail_norm(self.detail_fuse(concat([small, large], axis=1))))
        return self.project(concat([base, detail], axis=1))
