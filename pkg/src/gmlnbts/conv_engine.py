"""Raw-array engine for the 3D convolution family.

All functions here take and return plain ``numpy`` arrays laid out as
(B, C, D, H, W), row-major, W fastest. Autograd wrappers live in
``volume_ops``; this module only knows forward/backward arithmetic.

Two execution paths compute identical results:

* a vectorized numpy path (im2col / col2im built from strided slice
  copies plus BLAS matmuls),
* optional native kernels (see ``_kernels.c``), used automatically for
  the shapes where direct loops beat BLAS (small channel counts on
  large grids).

``set_native_mode`` lets tests pin either path.
"""

from __future__ import annotations

import ctypes
import threading

import numpy as np

from . import _native
from .errors import ShapeError, SpecError

_AXIS_NAMES = ("depth", "height", "width")
_local = threading.local()

_native_mode = "auto"  # auto | never | always


def set_native_mode(mode: str) -> None:
    if mode not in ("auto", "never", "always"):
        raise ValueError(f"unknown native mode {mode!r}")
    global _native_mode
    _native_mode = mode


def native_available() -> bool:
    return _native.load() is not None


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 3:
            raise SpecError(f"expected 3 per-axis values, got {v!r}")
        return tuple(int(x) for x in v)
    return (int(v),) * 3


def _scratch(key: str, shape: tuple[int, ...], dtype) -> np.ndarray:
    """Reusable per-thread scratch array; contents are undefined on entry."""
    pool = getattr(_local, "pool", None)
    if pool is None:
        pool = _local.pool = {}
    n = int(np.prod(shape))
    slot = (key, np.dtype(dtype).str)
    flat = pool.get(slot)
    if flat is None or flat.size < n:
        flat = pool[slot] = np.empty(n, dtype=dtype)
    return flat[:n].reshape(shape)


def conv_out_sizes(spatial, kernel, stride, pad) -> tuple[int, int, int]:
    out = []
    for name, s_in, k, s, p in zip(_AXIS_NAMES, spatial, kernel, stride, pad):
        if p >= k:
            raise SpecError(f"padding {p} must be smaller than kernel {k} on {name} axis")
        o = (s_in + 2 * p - k) // s + 1
        if o < 1:
            raise ShapeError(f"conv output collapses on {name} axis: input {s_in}, kernel {k}, stride {s}, pad {p}")
        out.append(o)
    return tuple(out)


def conv_transpose_out_sizes(spatial, kernel, stride, pad, out_pad) -> tuple[int, int, int]:
    out = []
    for name, s_in, k, s, p, op in zip(_AXIS_NAMES, spatial, kernel, stride, pad, out_pad):
        if op >= s:
            raise SpecError(f"output_padding {op} must be smaller than stride {s} on {name} axis")
        if p >= k:
            raise SpecError(f"padding {p} must be smaller than kernel {k} on {name} axis")
        o = (s_in - 1) * s - 2 * p + k + op
        if o < 1:
            raise ShapeError(f"transposed conv output collapses on {name} axis: input {s_in}")
        out.append(o)
    return tuple(out)


def _check_dtype(*arrays) -> np.dtype:
    dt = arrays[0].dtype
    if dt not in (np.float32, np.float64):
        raise SpecError(f"engine supports float32/float64, got {dt}")
    for a in arrays[1:]:
        if a is not None and a.dtype != dt:
            raise SpecError(f"mixed dtypes {dt} and {a.dtype}")
    return dt


def _pad_input(x: np.ndarray, pad) -> np.ndarray:
    if not any(pad):
        return x
    B, C, D, H, W = x.shape
    pd, ph, pw = pad
    xp = _scratch("pad", (B, C, D + 2 * pd, H + 2 * ph, W + 2 * pw), x.dtype)
    xp.fill(0)
    xp[:, :, pd:pd + D, ph:ph + H, pw:pw + W] = x
    return xp


def _fill_cols(xp: np.ndarray, kernel, stride, out_sp, key: str) -> np.ndarray:
    """im2col: cols[b, c, tap, n] over output positions n, one slice copy per tap."""
    B, C = xp.shape[:2]
    kd, kh, kw = kernel
    sd, sh, sw = stride
    Do, Ho, Wo = out_sp
    cols = _scratch(key, (B, C, kd * kh * kw, Do, Ho, Wo), xp.dtype)
    t = 0
    for a in range(kd):
        for c in range(kh):
            for e in range(kw):
                cols[:, :, t] = xp[:, :, a:a + sd * (Do - 1) + 1:sd,
                                   c:c + sh * (Ho - 1) + 1:sh,
                                   e:e + sw * (Wo - 1) + 1:sw]
                t += 1
    return cols.reshape(B, C * kd * kh * kw, Do * Ho * Wo)


def _native_on() -> bool:
    return _native_mode != "never" and _native.load() is not None


def _cptr(a: np.ndarray):
    t = ctypes.c_float if a.dtype == np.float32 else ctypes.c_double
    return a.ctypes.data_as(ctypes.POINTER(t))


def _native_fn(name: str, dtype) -> object:
    suffix = "f32" if dtype == np.float32 else "f64"
    return getattr(_native.load(), f"{name}_{suffix}")


# ---------------------------------------------------------------------------
# conv3d


def conv3d_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
               stride=1, pad=0) -> np.ndarray:
    if x.ndim != 5:
        raise ShapeError(f"conv3d input must be rank 5 (B,C,D,H,W), got rank {x.ndim}")
    if w.ndim != 5:
        raise ShapeError(f"conv3d weight must be rank 5 (Cout,Cin,kd,kh,kw), got rank {w.ndim}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"channel axis mismatch: input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    dtype = _check_dtype(x, w, b)
    stride, pad = _triple(stride), _triple(pad)
    kernel = w.shape[2:]
    B, Ci = x.shape[:2]
    Co = w.shape[0]
    out_sp = conv_out_sizes(x.shape[2:], kernel, stride, pad)
    if b is not None and b.shape != (Co,):
        raise ShapeError(f"bias must have shape ({Co},), got {b.shape}")

    unit = stride == (1, 1, 1)
    n_out = int(np.prod(out_sp))
    if kernel == (1, 1, 1) and unit and pad == (0, 0, 0):
        y = np.matmul(w.reshape(Co, Ci), x.reshape(B, Ci, n_out)).reshape(B, Co, *out_sp)
    elif unit and out_sp[2] <= 256 and _native_on() and (_native_mode == "always" or n_out >= 2048):
        xp = np.ascontiguousarray(_pad_input(x, pad))
        w_c = np.ascontiguousarray(w)
        y = np.empty((B, Co, *out_sp), dtype=dtype)
        _native_fn("conv_fwd2", dtype)(
            _cptr(xp), _cptr(w_c), _cptr(y),
            B, Ci, *xp.shape[2:], Co, *kernel, *out_sp)
    elif not unit and _native_mode == "always" and _native_on():
        x_c = np.ascontiguousarray(x)
        w_c = np.ascontiguousarray(w)
        y = np.empty((B, Co, *out_sp), dtype=dtype)
        _native_fn("conv_fwd", dtype)(
            _cptr(x_c), _cptr(w_c), _cptr(y),
            B, Ci, *x.shape[2:], Co, *kernel, *stride, *pad, *out_sp)
    else:
        xp = _pad_input(x, pad)
        cols = _fill_cols(xp, kernel, stride, out_sp, "cols.fwd")
        y = np.matmul(w.reshape(Co, -1), cols).reshape(B, Co, *out_sp)
    if b is not None:
        y += b.reshape(1, Co, 1, 1, 1)
    return y


def conv3d_bwd(x: np.ndarray, w: np.ndarray, gy: np.ndarray, stride=1, pad=0,
               with_bias: bool = True):
    """Returns (gx, gw, gb); gb is None when with_bias is False."""
    dtype = _check_dtype(x, w, gy)
    stride, pad = _triple(stride), _triple(pad)
    kernel = w.shape[2:]
    B, Ci = x.shape[:2]
    Co = w.shape[0]
    out_sp = gy.shape[2:]
    n_out = int(np.prod(out_sp))
    gy = np.ascontiguousarray(gy)

    gb = gy.sum(axis=(0, 2, 3, 4)) if with_bias else None

    if kernel == (1, 1, 1) and stride == (1, 1, 1) and pad == (0, 0, 0):
        gy_flat = gy.reshape(B, Co, n_out)
        x_flat = x.reshape(B, Ci, n_out)
        gw = np.matmul(gy_flat, x_flat.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gx = np.matmul(w.reshape(Co, Ci).T, gy_flat).reshape(x.shape)
        return gx, gw, gb

    if _native_mode == "always" and _native_on():
        x_c = np.ascontiguousarray(x)
        gw = np.empty_like(w)
        _native_fn("conv_gradw", dtype)(
            _cptr(gy), _cptr(x_c), _cptr(gw),
            B, Co, *out_sp, Ci, *x.shape[2:], *kernel, *stride, *pad)
    else:
        xp = _pad_input(x, pad)
        cols = _fill_cols(xp, kernel, stride, out_sp, "cols.bwd")
        gy_flat = gy.reshape(B, Co, n_out)
        gw = np.matmul(gy_flat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)

    if stride == (1, 1, 1):
        # For unit stride, d loss/d input is a correlation of gy with the
        # spatially flipped kernel and complementary padding.
        wf = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
        flip_pad = tuple(k - 1 - p for k, p in zip(kernel, pad))
        gx = conv3d_fwd(gy, wf, None, 1, flip_pad)
    else:
        gx = _conv_transpose_core(gy, w, stride, pad, x.shape[2:])
    return gx, gw, gb


# ---------------------------------------------------------------------------
# conv_transpose3d


def _conv_transpose_core(x: np.ndarray, w: np.ndarray, stride, pad, out_sp) -> np.ndarray:
    """Scatter x through w onto the dense output grid.

    Weight axes are read as (channel of x, channel of y, kd, kh, kw);
    a conv3d weight passed here therefore computes conv3d's input
    gradient, and a transposed-conv weight computes its forward.
    """
    dtype = x.dtype
    B, Cx = x.shape[:2]
    Co = w.shape[1]
    kernel = w.shape[2:]
    kd, kh, kw = kernel
    sd, sh, sw = stride
    pd, ph, pw = pad
    Di, Hi, Wi = x.shape[2:]
    Do, Ho, Wo = out_sp

    n_out = int(np.prod(out_sp))
    if _native_on() and Wi <= 256 and (
            _native_mode == "always" or (Cx * Co >= 512 and n_out >= 4096)):
        x_c = np.ascontiguousarray(x)
        w_c = np.ascontiguousarray(w)
        y = np.zeros((B, Co, Do, Ho, Wo), dtype=dtype)
        _native_fn("convt_fwd2", dtype)(
            _cptr(x_c), _cptr(w_c), _cptr(y),
            B, Cx, Di, Hi, Wi, Co, kd, kh, kw, sd, sh, sw, pd, ph, pw, Do, Ho, Wo)
        return y

    # cols[b, co*tap, n_in] = sum_ci w[ci, co, tap] x[b, ci, n_in]
    n_in = Di * Hi * Wi
    w_mat = w.reshape(Cx, Co * kd * kh * kw)
    cols = np.matmul(w_mat.T, x.reshape(B, Cx, n_in))
    cols = cols.reshape(B, Co, kd * kh * kw, Di, Hi, Wi)

    full = _scratch("convt.full",
                    (B, Co, (Di - 1) * sd + kd, (Hi - 1) * sh + kh, (Wi - 1) * sw + kw),
                    dtype)
    full.fill(0)
    t = 0
    for a in range(kd):
        for c in range(kh):
            for e in range(kw):
                full[:, :, a:a + sd * (Di - 1) + 1:sd,
                     c:c + sh * (Hi - 1) + 1:sh,
                     e:e + sw * (Wi - 1) + 1:sw] += cols[:, :, t]
                t += 1
    y = np.zeros((B, Co, Do, Ho, Wo), dtype=dtype)
    # The cropped window can extend past the scatter extent when
    # output_padding > padding; the overhang stays zero.
    ld = min(Do, full.shape[2] - pd)
    lh = min(Ho, full.shape[3] - ph)
    lw = min(Wo, full.shape[4] - pw)
    y[:, :, :ld, :lh, :lw] = full[:, :, pd:pd + ld, ph:ph + lh, pw:pw + lw]
    return y


def conv_transpose3d_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                         stride=1, pad=0, out_pad=0) -> np.ndarray:
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError("conv_transpose3d expects rank-5 input and weight")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"channel axis mismatch: input has {x.shape[1]} channels, weight expects {w.shape[0]}")
    dtype = _check_dtype(x, w, b)
    stride, pad, out_pad = _triple(stride), _triple(pad), _triple(out_pad)
    out_sp = conv_transpose_out_sizes(x.shape[2:], w.shape[2:], stride, pad, out_pad)
    Co = w.shape[1]
    if b is not None and b.shape != (Co,):
        raise ShapeError(f"bias must have shape ({Co},), got {b.shape}")
    y = _conv_transpose_core(x, w, stride, pad, out_sp)
    if b is not None:
        y += b.reshape(1, Co, 1, 1, 1)
    return y


def conv_transpose3d_bwd(x: np.ndarray, w: np.ndarray, gy: np.ndarray,
                         stride=1, pad=0, with_bias: bool = True):
    dtype = _check_dtype(x, w, gy)
    stride, pad = _triple(stride), _triple(pad)
    kernel = w.shape[2:]
    B, Ci = x.shape[:2]
    Co = w.shape[1]
    gy = np.ascontiguousarray(gy)

    gb = gy.sum(axis=(0, 2, 3, 4)) if with_bias else None

    # gx is an ordinary strided correlation of gy with w read as
    # (out=Ci, in=Co); sizes invert exactly because out_pad < stride.
    gx = conv3d_fwd(gy, w, None, stride, pad)
    if gx.shape != x.shape:
        gx = gx[:, :, :x.shape[2], :x.shape[3], :x.shape[4]]

    n_in = int(np.prod(x.shape[2:]))
    if _native_mode == "always" and _native_on():
        x_c = np.ascontiguousarray(x)
        gw = np.empty_like(w)
        _native_fn("conv_gradw", dtype)(
            _cptr(x_c), _cptr(gy), _cptr(gw),
            B, Ci, *x.shape[2:], Co, *gy.shape[2:], *kernel, *stride, *pad)
    else:
        gyp = _pad_input(gy, pad)
        cols = _fill_cols(gyp, kernel, stride, x.shape[2:], "cols.tbwd")
        gw = np.matmul(x.reshape(B, Ci, n_in), cols.transpose(0, 2, 1)).sum(axis=0)
        gw = gw.reshape(w.shape)
    return gx, gw, gb


# ---------------------------------------------------------------------------
# average pooling


def avg_pool3d_fwd(x: np.ndarray, kernel=3, stride=1, pad=1) -> np.ndarray:
    if x.ndim != 5:
        raise ShapeError(f"avg_pool3d input must be rank 5, got rank {x.ndim}")
    _check_dtype(x)
    kernel, stride, pad = _triple(kernel), _triple(stride), _triple(pad)
    out_sp = conv_out_sizes(x.shape[2:], kernel, stride, pad)
    Do, Ho, Wo = out_sp
    sd, sh, sw = stride
    xp = _pad_input(x, pad)
    acc = np.zeros((*x.shape[:2], *out_sp), dtype=x.dtype)
    for a in range(kernel[0]):
        for c in range(kernel[1]):
            for e in range(kernel[2]):
                acc += xp[:, :, a:a + sd * (Do - 1) + 1:sd,
                          c:c + sh * (Ho - 1) + 1:sh,
                          e:e + sw * (Wo - 1) + 1:sw]
    acc /= np.prod(kernel)
    return acc


def avg_pool3d_bwd(x_shape, kernel, stride, pad, gy: np.ndarray) -> np.ndarray:
    kernel, stride, pad = _triple(kernel), _triple(stride), _triple(pad)
    B, C, D, H, W = x_shape
    pd, ph, pw = pad
    sd, sh, sw = stride
    Do, Ho, Wo = gy.shape[2:]
    share = gy / np.prod(kernel, dtype=gy.dtype)
    gpad = np.zeros((B, C, D + 2 * pd, H + 2 * ph, W + 2 * pw), dtype=gy.dtype)
    for a in range(kernel[0]):
        for c in range(kernel[1]):
            for e in range(kernel[2]):
                gpad[:, :, a:a + sd * (Do - 1) + 1:sd,
                     c:c + sh * (Ho - 1) + 1:sh,
                     e:e + sw * (Wo - 1) + 1:sw] += share
    return np.ascontiguousarray(gpad[:, :, pd:pd + D, ph:ph + H, pw:pw + W])
