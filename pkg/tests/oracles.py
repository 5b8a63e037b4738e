"""Naive loop-level reference implementations.

Deliberately written as direct nested loops over the mathematical
definitions, sharing no code with the package's vectorized engine, so
the two can check each other.
"""

from __future__ import annotations

import numpy as np


def _triple(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (v, v, v)


def conv3d(x, w, b=None, stride=1, pad=0):
    B, Ci, D, H, W = x.shape
    Co, _, kd, kh, kw = w.shape
    sd, sh, sw = _triple(stride)
    pd, ph, pw = _triple(pad)
    Do = (D + 2 * pd - kd) // sd + 1
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    y = np.zeros((B, Co, Do, Ho, Wo), dtype=np.float64)
    for b_ in range(B):
        for co in range(Co):
            for od in range(Do):
                for oh in range(Ho):
                    for ow in range(Wo):
                        acc = 0.0
                        for ci in range(Ci):
                            for a in range(kd):
                                for c in range(kh):
                                    for e in range(kw):
                                        i, j, l = od * sd + a - pd, oh * sh + c - ph, ow * sw + e - pw
                                        if 0 <= i < D and 0 <= j < H and 0 <= l < W:
                                            acc += float(x[b_, ci, i, j, l]) * float(w[co, ci, a, c, e])
                        y[b_, co, od, oh, ow] = acc + (float(b[co]) if b is not None else 0.0)
    return y


def conv_transpose3d(x, w, b=None, stride=1, pad=0, out_pad=0):
    B, Ci, D, H, W = x.shape
    _, Co, kd, kh, kw = w.shape
    sd, sh, sw = _triple(stride)
    pd, ph, pw = _triple(pad)
    opd, oph, opw = _triple(out_pad)
    Do = (D - 1) * sd - 2 * pd + kd + opd
    Ho = (H - 1) * sh - 2 * ph + kh + oph
    Wo = (W - 1) * sw - 2 * pw + kw + opw
    y = np.zeros((B, Co, Do, Ho, Wo), dtype=np.float64)
    for b_ in range(B):
        for ci in range(Ci):
            for co in range(Co):
                for td in range(D):
                    for th in range(H):
                        for tw in range(W):
                            xv = float(x[b_, ci, td, th, tw])
                            for a in range(kd):
                                for c in range(kh):
                                    for e in range(kw):
                                        i, j, l = td * sd + a - pd, th * sh + c - ph, tw * sw + e - pw
                                        if 0 <= i < Do and 0 <= j < Ho and 0 <= l < Wo:
                                            y[b_, co, i, j, l] += xv * float(w[ci, co, a, c, e])
    if b is not None:
        for co in range(Co):
            y[:, co] += float(b[co])
    return y


def avg_pool3d(x, kernel=3, stride=1, pad=1):
    B, C, D, H, W = x.shape
    kd, kh, kw = _triple(kernel)
    sd, sh, sw = _triple(stride)
    pd, ph, pw = _triple(pad)
    Do = (D + 2 * pd - kd) // sd + 1
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    y = np.zeros((B, C, Do, Ho, Wo), dtype=np.float64)
    vol = kd * kh * kw
    for b_ in range(B):
        for c_ in range(C):
            for od in range(Do):
                for oh in range(Ho):
                    for ow in range(Wo):
                        acc = 0.0
                        for a in range(kd):
                            for cc in range(kh):
                                for e in range(kw):
                                    i, j, l = od * sd + a - pd, oh * sh + cc - ph, ow * sw + e - pw
                                    if 0 <= i < D and 0 <= j < H and 0 <= l < W:
                                        acc += float(x[b_, c_, i, j, l])
                        y[b_, c_, od, oh, ow] = acc / vol
    return y


def g2mcim_fuse(z_stack, weights):
    """Triple-loop mix: u[b,i,c,m] = sum_j s[b,i,j,c] f[b,j,c,m], plus residual."""
    B, M4, C = z_stack.shape[:3]
    spatial = z_stack.shape[3:]
    flat = z_stack.reshape(B, M4, C, -1)
    out = np.array(flat, dtype=np.float64, copy=True)
    for b in range(B):
        for i in range(M4):
            for c in range(C):
                for m in range(flat.shape[3]):
                    acc = 0.0
                    for j in range(M4):
                        acc += float(weights[b, i, j, c]) * float(flat[b, j, c, m])
                    out[b, i, c, m] += acc
    return out.reshape(z_stack.shape)


def region_counts(pred, gt, labels):
    """Per-voxel counting oracle for one composite region."""
    n_pred = n_gt = n_both = 0
    flat_p = pred.reshape(-1)
    flat_g = gt.reshape(-1)
    for v in range(flat_p.size):
        p_in = int(flat_p[v]) in labels
        g_in = int(flat_g[v]) in labels
        n_pred += p_in
        n_gt += g_in
        n_both += p_in and g_in
    return n_pred, n_gt, n_both
