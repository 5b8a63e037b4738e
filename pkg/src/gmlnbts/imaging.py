"""2D slice extraction and PNG rendering for the review workflow."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .errors import DataError, ShapeError

AXES = ("d", "h", "w")

# label -> RGB, alpha-blended over the grayscale slice
OVERLAY_COLORS = {1: (255, 0, 0), 2: (0, 255, 0), 3: (255, 255, 0)}
OVERLAY_ALPHA = 0.4


def extract_slice(volume: np.ndarray, axis: str, index: int) -> np.ndarray:
    if volume.ndim != 3:
        raise ShapeError(f"expected (D,H,W) volume, got rank {volume.ndim}")
    if axis not in AXES:
        raise DataError(f"axis must be one of {AXES}, got {axis!r}")
    ax = AXES.index(axis)
    if not 0 <= index < volume.shape[ax]:
        raise IndexError(f"slice index {index} outside [0, {volume.shape[ax]}) on axis {axis}")
    return np.take(volume, index, axis=ax)


def to_gray(slice2d: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Window to 8-bit; a flat window renders uniform mid-gray."""
    if hi <= lo:
        return np.full(slice2d.shape, 128, dtype=np.uint8)
    scaled = (slice2d.astype(np.float64) - lo) / (hi - lo)
    return (np.clip(scaled, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def render_slice_png(volume: np.ndarray, axis: str, index: int,
                     labels: np.ndarray | None = None) -> bytes:
    """Grayscale PNG of one slice, min-max windowed over the whole volume.

    With ``labels``, tumor classes are alpha-blended in color on top.
    """
    gray = to_gray(extract_slice(volume, axis, index),
                   float(volume.min()), float(volume.max()))
    if labels is None:
        img = Image.fromarray(gray, mode="L")
    else:
        if labels.shape != volume.shape:
            raise ShapeError(f"label dims {labels.shape} disagree with volume {volume.shape}")
        lab = extract_slice(labels, axis, index)
        rgb = np.stack([gray, gray, gray], axis=-1).astype(np.float64)
        for value, color in OVERLAY_COLORS.items():
            mask = lab == value
            rgb[mask] = (1.0 - OVERLAY_ALPHA) * rgb[mask] + OVERLAY_ALPHA * np.asarray(color)
        img = Image.fromarray(rgb.astype(np.uint8), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()
