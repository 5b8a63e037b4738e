"""Synthetic multimodal tumor phantoms.

Each phantom is a bright brain ellipsoid on a dark background holding
three nested tumor ellipsoids: a necrotic core (label 1), an enhancing
rim around it (label 3), and surrounding edema (label 2). Modality
contrast follows the usual clinical sensitivities: the enhancing rim
lights up in T1ce while the core goes dark there, and edema is brightest
in FLAIR and T2. No single modality separates all regions, so a model
has to combine them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SpecError
from .volume_io import MODALITIES, Study

# base intensity per (tissue, modality); generator config, not a claim
# about real scanner physics
DEFAULT_INTENSITIES: dict[str, dict[str, float]] = {
    "background": {"T1": 0.1, "T1ce": 0.1, "T2": 0.1, "FLAIR": 0.1},
    "brain":      {"T1": 1.0, "T1ce": 1.0, "T2": 1.0, "FLAIR": 1.0},
    "edema":      {"T1": 0.9, "T1ce": 1.0, "T2": 1.7, "FLAIR": 1.8},
    "core":       {"T1": 0.7, "T1ce": 0.4, "T2": 1.4, "FLAIR": 1.2},
    "enhancing":  {"T1": 0.9, "T1ce": 1.9, "T2": 1.2, "FLAIR": 1.3},
}

_TISSUE_BY_LABEL = {0: "brain", 1: "core", 2: "edema", 3: "enhancing"}


@dataclass(frozen=True)
class PhantomConfig:
    size: tuple[int, int, int] = (32, 32, 32)
    seed: int = 0
    noise_sigma: float = 0.05
    gain: float = 1.0
    brain_radius_frac: tuple[float, float] = (0.40, 0.46)
    tumor_radius_frac: tuple[float, float] = (0.20, 0.30)   # WT, of volume size
    core_frac: tuple[float, float] = (0.55, 0.75)           # TC radius / WT radius
    inner_frac: tuple[float, float] = (0.45, 0.65)          # core radius / TC radius
    # per-study, per-modality tumor-contrast retention, drawn uniformly;
    # below 1.0 some modalities fade toward plain brain signal on a given
    # scan, so which modality carries the evidence varies case by case
    modality_fade: tuple[float, float] = (1.0, 1.0)
    intensities: dict = field(default_factory=lambda: DEFAULT_INTENSITIES)

    def __post_init__(self):
        if any(s < 8 for s in self.size):
            raise SpecError(f"phantom size {self.size} too small")
        for name, (lo, hi) in (("core_frac", self.core_frac), ("inner_frac", self.inner_frac)):
            if not (0 < lo <= hi < 1):
                raise SpecError(f"{name} must nest strictly inside its parent: {(lo, hi)}")
        lo, hi = self.modality_fade
        if not (0 <= lo <= hi <= 1):
            raise SpecError(f"modality_fade must satisfy 0 <= lo <= hi <= 1, got {(lo, hi)}")
        for tissue in _TISSUE_BY_LABEL.values():
            if any(self.intensities[tissue][m] <= 0 for m in MODALITIES):
                raise SpecError(f"intensities for {tissue} must be positive")


def shifted_config(cfg: PhantomConfig) -> PhantomConfig:
    """Scanner-shift variant: global gain up 15 percent, noise doubled."""
    return replace(cfg, gain=cfg.gain * 1.15, noise_sigma=cfg.noise_sigma * 2.0)


def _inside(coords, center, radii) -> np.ndarray:
    acc = np.zeros(coords[0].shape)
    for c, ctr, r in zip(coords, center, radii):
        acc = acc + ((c - ctr) / r) ** 2
    return acc <= 1.0


def generate_phantom(cfg: PhantomConfig, index: int) -> Study:
    """Deterministic phantom for (cfg.seed, index); labels nest by construction."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, index)))
    size = np.asarray(cfg.size, dtype=float)
    coords = np.meshgrid(*(np.arange(s, dtype=float) for s in cfg.size), indexing="ij")

    center = size / 2.0
    brain_r = rng.uniform(*cfg.brain_radius_frac, size=3) * size
    brain = _inside(coords, center, brain_r)

    wt_r = rng.uniform(*cfg.tumor_radius_frac, size=3) * size
    max_off = np.maximum(brain_r - wt_r - 1.0, 0.0) * 0.6
    tumor_center = center + rng.uniform(-1.0, 1.0, size=3) * max_off
    tc_r = wt_r * rng.uniform(*cfg.core_frac)
    core_r = tc_r * rng.uniform(*cfg.inner_frac)

    whole = _inside(coords, tumor_center, wt_r) & brain
    tc = _inside(coords, tumor_center, tc_r) & brain
    core = _inside(coords, tumor_center, core_r) & brain

    labels = np.zeros(cfg.size, dtype=np.uint8)
    labels[whole & ~tc] = 2          # edema
    labels[tc & ~core] = 3           # enhancing rim
    labels[core] = 1                 # necrotic / non-enhancing core

    fades = {m: float(rng.uniform(*cfg.modality_fade)) for m in MODALITIES}
    modalities = {}
    for m in MODALITIES:
        vol = np.full(cfg.size, cfg.intensities["background"][m], dtype=np.float64)
        brain_base = cfg.intensities["brain"][m]
        vol[brain] = brain_base
        for lab, tissue in _TISSUE_BY_LABEL.items():
            if lab == 0:
                continue
            # faded scans keep anatomy but lose tumor-tissue contrast
            contrast = cfg.intensities[tissue][m] - brain_base
            vol[labels == lab] = brain_base + fades[m] * contrast
        vol += rng.normal(0.0, cfg.noise_sigma, size=cfg.size)
        modalities[m] = (vol * cfg.gain).astype(np.float32)

    return Study(
        id=f"phantom-{cfg.seed}-{index:04d}",
        modalities=modalities,
        gt_labels=labels,
        provenance=f"phantom seed={cfg.seed} index={index}",
    )


def generate_dataset(cfg: PhantomConfig, count: int, start_index: int = 0) -> list[Study]:
    return [generate_phantom(cfg, i) for i in range(start_index, start_index + count)]
