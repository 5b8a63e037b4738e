"""Autograd wrappers for the volumetric kernels.

These are thin shells over ``conv_engine``: validate, run the raw
forward, and register a vector-Jacobian product that calls the matching
raw backward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conv_engine as eng
from .errors import ShapeError, SpecError
from .tensor import Tensor, _result, tmean


@dataclass(frozen=True)
class ConvSpec:
    """Validated geometry of one (transposed) convolution layer."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int, int]
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)
    output_padding: tuple[int, int, int] = (0, 0, 0)
    transposed: bool = field(default=False)

    def __post_init__(self):
        for name, val in (("kernel", self.kernel), ("stride", self.stride),
                          ("padding", self.padding), ("output_padding", self.output_padding)):
            if len(val) != 3 or any(int(v) != v for v in val):
                raise SpecError(f"{name} must be a 3-tuple of integers, got {val!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise SpecError("channel counts must be positive")
        if any(k < 1 for k in self.kernel) or any(s < 1 for s in self.stride):
            raise SpecError("kernel and stride must be >= 1 on every axis")
        if any(p >= k for p, k in zip(self.padding, self.kernel)):
            raise SpecError(f"padding {self.padding} must stay below kernel {self.kernel}")
        if self.transposed and any(op >= s for op, s in zip(self.output_padding, self.stride)):
            raise SpecError(f"output_padding {self.output_padding} must stay below stride {self.stride}")
        if not self.transposed and any(self.output_padding):
            raise SpecError("output_padding only applies to transposed convolutions")

    @staticmethod
    def conv(cin: int, cout: int, kernel=3, stride=1, padding=0) -> "ConvSpec":
        return ConvSpec(cin, cout, eng._triple(kernel), eng._triple(stride), eng._triple(padding))

    @staticmethod
    def transpose(cin: int, cout: int, kernel, stride, padding=0, output_padding=0) -> "ConvSpec":
        return ConvSpec(cin, cout, eng._triple(kernel), eng._triple(stride),
                        eng._triple(padding), eng._triple(output_padding), transposed=True)


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    y = eng.conv3d_fwd(x.data, w.data, None if b is None else b.data, stride, padding)
    xd, wd = x.data, w.data
    with_bias = b is not None

    def vjp(g):
        gx, gw, gb = eng.conv3d_bwd(xd, wd, g, stride, padding, with_bias=with_bias)
        return (gx, gw, gb) if with_bias else (gx, gw)

    parents = (x, w, b) if with_bias else (x, w)
    return _result(y, parents, vjp)


def conv_transpose3d(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride=1, padding=0, output_padding=0) -> Tensor:
    y = eng.conv_transpose3d_fwd(x.data, w.data, None if b is None else b.data,
                                 stride, padding, output_padding)
    xd, wd = x.data, w.data
    with_bias = b is not None

    def vjp(g):
        gx, gw, gb = eng.conv_transpose3d_bwd(xd, wd, g, stride, padding, with_bias=with_bias)
        return (gx, gw, gb) if with_bias else (gx, gw)

    parents = (x, w, b) if with_bias else (x, w)
    return _result(y, parents, vjp)


def avg_pool3d(x: Tensor, kernel=3, stride=1, padding=1) -> Tensor:
    y = eng.avg_pool3d_fwd(x.data, kernel, stride, padding)
    x_shape = x.shape

    def vjp(g):
        return (eng.avg_pool3d_bwd(x_shape, kernel, stride, padding, g),)

    return _result(y, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """Collapse spatial axes of (B,C,D,H,W) to channel descriptors (B,C)."""
    if x.ndim != 5:
        raise ShapeError(f"global_avg_pool expects (B,C,D,H,W), got rank {x.ndim}")
    return tmean(x, axis=(2, 3, 4))


# ---------------------------------------------------------------------------
# trilinear upsampling

_interp_cache: dict[tuple[int, int, str], np.ndarray] = {}


def _interp_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    """Dense 1D interpolation operator, half-pixel sampling with edge clamp."""
    key = (n_in, factor, np.dtype(dtype).str)
    cached = _interp_cache.get(key)
    if cached is not None:
        return cached
    n_out = n_in * factor
    m = np.zeros((n_out, n_in), dtype=dtype)
    for o in range(n_out):
        src = (o + 0.5) / factor - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        t = src - i0
        i1 = min(i0 + 1, n_in - 1)
        m[o, i0] += 1.0 - t
        m[o, i1] += t
    _interp_cache[key] = m
    return m


def _apply_axis(arr: np.ndarray, m: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(arr, axis, -1)
    out = moved @ m.T
    return np.ascontiguousarray(np.moveaxis(out, -1, axis))


def trilinear_upsample3d(x: Tensor, factor) -> Tensor:
    """Upsample spatial axes by integer factors with trilinear weights.

    Sampling uses half-pixel source coordinates clamped to the volume, so a
    constant volume stays constant and outputs never leave [min(x), max(x)].
    """
    if x.ndim != 5:
        raise ShapeError(f"trilinear_upsample3d expects (B,C,D,H,W), got rank {x.ndim}")
    fd, fh, fw = eng._triple(factor)
    if min(fd, fh, fw) < 1:
        raise SpecError(f"upsample factors must be >= 1, got {(fd, fh, fw)}")
    mats = [_interp_matrix(n, f, x.dtype) for n, f in zip(x.shape[2:], (fd, fh, fw))]

    data = x.data
    for axis, m in zip((2, 3, 4), mats):
        if m.shape[0] != m.shape[1]:
            data = _apply_axis(data, m, axis)

    def vjp(g):
        for axis, m in zip((4, 3, 2), reversed(mats)):
            if m.shape[0] != m.shape[1]:
                g = _apply_axis(g, m.T, axis)
        return (g,)

    return _result(np.ascontiguousarray(data), (x,), vjp)
