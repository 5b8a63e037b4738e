"""Graph-based multi-modal collaborative interaction module (G2MCIM).

The four encoded modalities form graph nodes. Spatially pooled channel
descriptors are paired (receiver, sender), scored by modality-specific
relation encoders, normalized over senders with a softmax, and used to mix
modality features channel-wise. A residual keeps each modality's own
features intact.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, SpecError
from ..nn import Linear, Module
from ..tensor import Tensor, _result, add, concat, leaky_relu, repeat_axis, reshape, softmax, tmean

MODALITY_COUNT = 4


def relation_pairs(v: Tensor) -> Tensor:
    """Pair pooled descriptors: out[b, i, j] = concat(v[b, i], v[b, j]).

    Index i is the receiving modality, j the sending one.
    """
    if v.ndim != 3 or v.shape[1] != MODALITY_COUNT:
        raise ShapeError(f"expected (B,{MODALITY_COUNT},C) descriptors, got {v.shape}")
    receivers = repeat_axis(v, 2, MODALITY_COUNT)   # (B, i, j, C), constant over j
    senders = repeat_axis(v, 1, MODALITY_COUNT)     # (B, i, j, C), constant over i
    return concat([receivers, senders], axis=3)


def modal_weighted_mix(s: Tensor, f: Tensor) -> Tensor:
    """u[b,i,c,m] = sum_j s[b,i,j,c] * f[b,j,c,m] (channel-wise edge weighting)."""
    sd, fd = s.data, f.data
    data = np.einsum("bijc,bjcm->bicm", sd, fd, optimize=True)

    def vjp(g):
        gs = np.einsum("bicm,bjcm->bijc", g, fd, optimize=True)
        gf = np.einsum("bijc,bicm->bjcm", sd, g, optimize=True)
        return gs, gf

    return _result(data, (s, f), vjp)


class G2MCIM(Module):
    def __init__(self, channels: int, hidden: int | None = None, leaky_slope: float = 0.01,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        if channels < 1:
            raise SpecError("channels must be positive")
        self.channels = channels
        self.leaky_slope = leaky_slope
        hidden = hidden or channels
        rng = rng or np.random.default_rng()
        # One relation encoder per receiving modality; sharing them would
        # erase the modality-specific sensitivity the graph is meant to model.
        for i in range(MODALITY_COUNT):
            setattr(self, f"relation_in_{i}", Linear(2 * channels, hidden, rng=rng, dtype=dtype))
            setattr(self, f"relation_out_{i}", Linear(hidden, channels, rng=rng, dtype=dtype))

    def edge_weights(self, pairs: Tensor) -> Tensor:
        """(B,4,4,2C) relation pairs -> (B,4,4,C) weights, softmax over senders."""
        scores = []
        for i in range(MODALITY_COUNT):
            enc_in = getattr(self, f"relation_in_{i}")
            enc_out = getattr(self, f"relation_out_{i}")
            a = enc_out(leaky_relu(enc_in(pairs[:, i]), self.leaky_slope))
            scores.append(reshape(a, (a.shape[0], 1, MODALITY_COUNT, self.channels)))
        return softmax(concat(scores, axis=1), axis=2)

    def fuse(self, z_stack: Tensor, weights: Tensor) -> Tensor:
        """Apply edge weights to stacked features (B,4,C,D,H,W), residual included."""
        b, m, c = z_stack.shape[:3]
        spatial = z_stack.shape[3:]
        flat = reshape(z_stack, (b, m, c, -1))
        mixed = modal_weighted_mix(weights, flat)
        return add(z_stack, reshape(mixed, (b, m, c, *spatial)))

    def __call__(self, modality_features: list[Tensor]) -> Tensor:
        if len(modality_features) != MODALITY_COUNT:
            raise ShapeError(f"expected {MODALITY_COUNT} modality feature maps, got {len(modality_features)}")
        shape = modality_features[0].shape
        for i, z in enumerate(modality_features[1:], start=1):
            if z.shape != shape:
                raise ShapeError(f"modality {i} features {z.shape} disagree with {shape}")
        b, c = shape[0], shape[1]
        stack = concat([reshape(z, (b, 1, c, *shape[2:])) for z in modality_features], axis=1)
        descriptors = tmean(stack, axis=(3, 4, 5))          # (B, 4, C)
        weights = self.edge_weights(relation_pairs(descriptors))
        fused = self.fuse(stack, weights)
        return reshape(fused, (b, MODALITY_COUNT * c, *shape[2:]))
