"""Characterize upsampler families by their checkerboard tendency.

Transposed convolutions with stride greater than one weight kernel taps
unevenly across output phases, which shows up as a periodic intensity
pattern; trilinear interpolation cannot produce one. The study below
drives randomly initialized instances of each upsampler over a random
volume and scores the outputs with the phase-disparity metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import checkerboard_phase_disparity
from .model.vrum import VRUM, VrumSpec
from .nn import ConvTranspose3d
from .tensor import Tensor, no_grad
from .volume_ops import trilinear_upsample3d


@dataclass(frozen=True)
class UpsamplerScore:
    method: str
    mean: float
    std: float
    per_seed: tuple[float, ...]


def _mean_channel_disparity(volume5d: np.ndarray, factor: int) -> float:
    scores = [checkerboard_phase_disparity(volume5d[0, c], factor)
              for c in range(volume5d.shape[1])]
    return float(np.mean(scores))


def upsampler_phase_study(seeds: range | list[int] = range(10), channels: int = 8,
                          grid: int = 8, factor: int = 2) -> list[UpsamplerScore]:
    """Phase disparity of trilinear, bare k=3 transposed conv, and VRUM outputs."""
    results: dict[str, list[float]] = {"trilinear": [], "transpose_k3": [], "vrum": []}
    for seed in seeds:
        rng = np.random.default_rng(np.random.SeedSequence((918273, seed)))
        x = Tensor(rng.standard_normal((1, channels, grid, grid, grid)).astype(np.float32))
        with no_grad():
            tri = trilinear_upsample3d(x, factor)
            tconv = ConvTranspose3d(channels, channels, 3, factor, padding=1,
                                    output_padding=factor - 1,
                                    rng=np.random.default_rng(np.random.SeedSequence((seed, 1))))
            tr = tconv(x)
            # train mode so the internal BatchNorm normalizes with batch
            # statistics; fresh modules have no calibrated running stats
            vrum = VRUM(VrumSpec(channels, channels, factor),
                        np.random.default_rng(np.random.SeedSequence((seed, 2))))
            vr = vrum(x)
        results["trilinear"].append(_mean_channel_disparity(tri.data, factor))
        results["transpose_k3"].append(_mean_channel_disparity(tr.data, factor))
        results["vrum"].append(_mean_channel_disparity(vr.data, factor))
    return [UpsamplerScore(name, float(np.mean(v)), float(np.std(v)), tuple(v))
            for name, v in results.items()]


def phase_study_rows(scores: list[UpsamplerScore]) -> list[dict]:
    return [{"method": s.method, "mean": s.mean, "std": s.std,
             "per_seed": list(s.per_seed)} for s in scores]
