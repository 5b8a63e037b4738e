"""Modality-aware adaptive encoder (M2AE).

One M2AE encodes a single MRI modality with a four-branch 3D inception
block (kernel sizes 1/3/5 plus an average-pool branch), GroupNorm, and a
convolutional residual refinement. Each branch contributes a quarter of
the output channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, SpecError
from ..nn import Conv3d, GroupNorm, Module
from ..tensor import Tensor, add, concat, relu
from ..volume_ops import avg_pool3d


@dataclass(frozen=True)
class M2aeSpec:
    in_channels: int
    out_channels: int = 16
    reduce_channels: int | None = None
    groups: int = 4

    def __post_init__(self):
        if self.out_channels % 4:
            raise SpecError(f"out_channels {self.out_channels} must be divisible by 4 (one quarter per branch)")
        if self.out_channels % self.groups:
            raise SpecError(f"groups {self.groups} must divide out_channels {self.out_channels}")

    @property
    def reduced(self) -> int:
        if self.reduce_channels is not None:
            return self.reduce_channels
        return max(self.out_channels // 4, 4)


class M2AE(Module):
    def __init__(self, spec: M2aeSpec, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.spec = spec
        cin, c4, cr = spec.in_channels, spec.out_channels // 4, spec.reduced
        self.point = Conv3d(cin, c4, 1, rng=rng, dtype=dtype)
        self.mid_reduce = Conv3d(cin, cr, 1, rng=rng, dtype=dtype)
        self.mid = Conv3d(cr, c4, 3, padding=1, rng=rng, dtype=dtype)
        self.wide_reduce = Conv3d(cin, cr, 1, rng=rng, dtype=dtype)
        self.wide = Conv3d(cr, c4, 5, padding=2, rng=rng, dtype=dtype)
        self.pooled = Conv3d(cin, c4, 1, rng=rng, dtype=dtype)
        self.norm = GroupNorm(spec.out_channels, spec.groups, dtype=dtype)
        self.refine = Conv3d(spec.out_channels, spec.out_channels, 3, padding=1, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 5 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected (B,{self.spec.in_channels},D,H,W), got {x.shape}")
        if min(x.shape[2:]) < 5:
            raise ShapeError(f"spatial dims {x.shape[2:]} below the widest kernel (5)")
        y = concat([
            self.point(x),
            self.mid(self.mid_reduce(x)),
            self.wide(self.wide_reduce(x)),
            self.pooled(avg_pool3d(x, 3, 1, 1)),
        ], axis=1)
        z = self.refine(relu(self.norm(y)))
        return add(z, y)
