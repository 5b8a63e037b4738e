"""Full GMLN-BTS assembly: encoders, fusion, bottleneck, decoder, head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, SpecError
from ..nn import Conv3d, Module
from ..tensor import Tensor, add, concat
from .g2mcim import G2MCIM, MODALITY_COUNT
from .m2ae import M2AE, M2aeSpec
from .transformer import StageSpec, TransformerStage
from .vrum import VRUM, VrumSpec

MODALITIES = ("T1", "T1ce", "T2", "FLAIR")


@dataclass(frozen=True)
class GmlnConfig:
    classes: int = 4
    encoder_channels: int = 16
    encoder_groups: int = 4
    relation_hidden: int | None = None
    use_fusion: bool = True
    stages: tuple[StageSpec, ...] = (
        StageSpec(dim=32, heads=2, blocks=2, embed_kernel=4, embed_stride=4, embed_pad=0, sr_ratio=4),
        StageSpec(dim=64, heads=4, blocks=2, embed_kernel=3, embed_stride=2, embed_pad=1, sr_ratio=2),
        StageSpec(dim=160, heads=8, blocks=2, embed_kernel=3, embed_stride=2, embed_pad=1, sr_ratio=1),
    )
    decoder_entry: int = 128
    decoder_channels: tuple[int, int, int] = (64, 32, 16)
    decoder_factors: tuple[int, int, int] = (2, 2, 4)

    def __post_init__(self):
        if len(self.stages) != 3 or len(self.decoder_channels) != 3:
            raise SpecError("reference layout uses three stages and three upsampling modules")
        total_up = int(np.prod(self.decoder_factors))
        total_down = int(np.prod([s.embed_stride for s in self.stages]))
        if total_up != total_down:
            raise SpecError(f"decoder factors {self.decoder_factors} do not undo strides {total_down}")

    @property
    def downsample(self) -> int:
        return int(np.prod([s.embed_stride for s in self.stages]))


def tiny_config(use_fusion: bool = True) -> GmlnConfig:
    """Small configuration for float64 verification runs."""
    return GmlnConfig(
        encoder_channels=8,
        encoder_groups=4,
        use_fusion=use_fusion,
        stages=(
            StageSpec(dim=8, heads=2, blocks=1, embed_kernel=4, embed_stride=4, embed_pad=0, sr_ratio=2, mlp_ratio=2),
            StageSpec(dim=8, heads=2, blocks=1, embed_kernel=3, embed_stride=2, embed_pad=1, sr_ratio=1, mlp_ratio=2),
            StageSpec(dim=16, heads=2, blocks=1, embed_kernel=3, embed_stride=2, embed_pad=1, sr_ratio=1, mlp_ratio=2),
        ),
        decoder_entry=16,
        decoder_channels=(8, 8, 8),
    )


class GmlnModel(Module):
    """Segmentation network over four-modality volumes.

    forward: (B, 4, D, H, W) -> class logits (B, classes, D, H, W), with
    D, H, W divisible by the encoder downsampling factor. Modality order
    is fixed as (T1, T1ce, T2, FLAIR).
    """

    def __init__(self, config: GmlnConfig | None = None, seed: int = 0, dtype=np.float32):
        super().__init__()
        cfg = config or GmlnConfig()
        self.config = cfg
        self.dtype = dtype
        self.version = 0
        rng = np.random.default_rng(seed)

        enc_spec = M2aeSpec(1, cfg.encoder_channels, groups=cfg.encoder_groups)
        for name in MODALITIES:
            setattr(self, f"encoder_{name.lower()}", M2AE(enc_spec, rng, dtype))
        if cfg.use_fusion:
            self.fusion = G2MCIM(cfg.encoder_channels, cfg.relation_hidden, rng=rng, dtype=dtype)

        width = MODALITY_COUNT * cfg.encoder_channels
        for i, stage in enumerate(cfg.stages):
            setattr(self, f"stage_{i}", TransformerStage(width, stage, rng, dtype))
            width = stage.dim

        self.decoder_entry = Conv3d(cfg.stages[2].dim, cfg.decoder_entry, 1, rng=rng, dtype=dtype)
        d0, d1, d2 = cfg.decoder_channels
        f0, f1, f2 = cfg.decoder_factors
        self.up_deep = VRUM(VrumSpec(cfg.decoder_entry, d0, f0), rng, dtype)
        self.skip_mid = Conv3d(cfg.stages[1].dim, d0, 1, rng=rng, dtype=dtype)
        self.up_mid = VRUM(VrumSpec(d0, d1, f1), rng, dtype)
        self.skip_early = Conv3d(cfg.stages[0].dim, d1, 1, rng=rng, dtype=dtype)
        self.up_full = VRUM(VrumSpec(d1, d2, f2), rng, dtype)
        self.head = Conv3d(d2, cfg.classes, 1, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        cfg = self.config
        if x.ndim != 5 or x.shape[1] != MODALITY_COUNT:
            raise ShapeError(f"expected (B,{MODALITY_COUNT},D,H,W) input, got {x.shape}")
        down = cfg.downsample
        if any(s % down for s in x.shape[2:]):
            raise ShapeError(f"spatial dims {x.shape[2:]} must be divisible by {down}")

        feats = [getattr(self, f"encoder_{name.lower()}")(x[:, i:i + 1])
                 for i, name in enumerate(MODALITIES)]
        fused = self.fusion(feats) if cfg.use_fusion else concat(feats, axis=1)

        s1 = self.stage_0(fused)
        s2 = self.stage_1(s1)
        s3 = self.stage_2(s2)

        d = self.decoder_entry(s3)
        d = add(self.up_deep(d), self.skip_mid(s2))
        d = add(self.up_mid(d), self.skip_early(s1))
        d = self.up_full(d)
        return self.head(d)


def param_count(model: Module) -> int:
    return model.param_count()
