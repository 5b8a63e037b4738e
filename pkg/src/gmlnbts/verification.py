"""Float64 gradient verification suites for kernels and model blocks.

Used by the ``gradcheck`` CLI command and the acceptance tests. All
checks run in float64 with central differences; inputs are nudged away
from activation kinks so the difference quotient is meaningful.
"""

from __future__ import annotations

import numpy as np

from .check import grad_check
from .model.g2mcim import G2MCIM
from .model.m2ae import M2AE, M2aeSpec
from .model.network import GmlnModel, tiny_config
from .model.vrum import VRUM, VrumSpec
from .nn import Module
from .tensor import (Tensor, batch_norm, group_norm, layer_norm, leaky_relu, linear,
                     log_softmax, matmul, relu, softmax)
from .volume_ops import avg_pool3d, conv3d, conv_transpose3d, trilinear_upsample3d

GRAD_TOL = 1e-4
STEP = 1e-5


def _t(rng, *shape, nudge: float = 0.0) -> Tensor:
    data = rng.standard_normal(shape)
    if nudge:
        data = data + nudge * np.sign(data)
    return Tensor(data, requires_grad=True)


def op_grad_checks(seed: int = 0) -> list[tuple[str, float]]:
    """Max relative gradient error for every differentiable kernel op."""
    rng = np.random.default_rng(seed)
    checks: list[tuple[str, float]] = []

    x = _t(rng, 2, 2, 3, 4, 5)
    w = _t(rng, 3, 2, 3, 3, 3)
    b = _t(rng, 3)
    checks.append(("conv3d", grad_check(
        lambda x, w, b: (conv3d(x, w, b, 1, 1) ** 2).mean(), [x, w, b], STEP)))

    x = _t(rng, 2, 3, 3, 3, 3)
    w = _t(rng, 3, 2, 4, 4, 4)
    b = _t(rng, 2)
    checks.append(("conv_transpose3d", grad_check(
        lambda x, w, b: (conv_transpose3d(x, w, b, 2, 1, 1) ** 2).mean(), [x, w, b], STEP)))

    x = _t(rng, 1, 2, 4, 4, 4)
    checks.append(("avg_pool3d", grad_check(
        lambda x: (avg_pool3d(x, 3, 1, 1) ** 2).mean(), [x], STEP)))

    x = _t(rng, 1, 2, 3, 3, 3)
    checks.append(("trilinear_upsample3d", grad_check(
        lambda x: (trilinear_upsample3d(x, 2) ** 2).mean(), [x], STEP)))

    x = _t(rng, 4, 5)
    w = _t(rng, 3, 5)
    b = _t(rng, 3)
    checks.append(("linear", grad_check(
        lambda x, w, b: (linear(x, w, b) ** 2).mean(), [x, w, b], STEP)))

    a = _t(rng, 2, 3, 4)
    bm = _t(rng, 2, 4, 5)
    checks.append(("matmul_batched", grad_check(
        lambda a, b: (matmul(a, b) ** 2).mean(), [a, bm], STEP)))

    # normalizing ops get a fixed random-projection loss; squared-mean
    # losses are nearly invariant to their inputs there, which starves the
    # difference quotient
    x = _t(rng, 3, 6)
    r = Tensor(rng.standard_normal((3, 6)))
    checks.append(("softmax_axis", grad_check(
        lambda x: (softmax(x, 1) * r).sum(), [x], STEP)))
    x = _t(rng, 3, 6)
    checks.append(("log_softmax", grad_check(
        lambda x: (log_softmax(x, 1) * r).sum(), [x], STEP)))

    x = _t(rng, 2, 8, nudge=0.3)
    checks.append(("relu", grad_check(lambda x: (relu(x) ** 2).mean(), [x], STEP)))
    x = _t(rng, 2, 8, nudge=0.3)
    checks.append(("leaky_relu", grad_check(
        lambda x: (leaky_relu(x, 0.01) ** 2).mean(), [x], STEP)))

    x = _t(rng, 2, 4, 3, 3, 3)
    g = _t(rng, 4)
    bb = _t(rng, 4)
    r = Tensor(rng.standard_normal((2, 4, 3, 3, 3)))
    checks.append(("group_norm", grad_check(
        lambda x, g, b: (group_norm(x, 2, g, b) * r).sum(), [x, g, bb], STEP)))

    tok = _t(rng, 2, 5, 6)
    g = _t(rng, 6)
    bb = _t(rng, 6)
    r = Tensor(rng.standard_normal((2, 5, 6)))
    checks.append(("layer_norm", grad_check(
        lambda x, g, b: (layer_norm(x, g, b) * r).sum(), [tok, g, bb], STEP)))

    x = _t(rng, 2, 3, 3, 3, 3)
    g = _t(rng, 3)
    bb = _t(rng, 3)
    r = Tensor(rng.standard_normal((2, 3, 3, 3, 3)))

    def bn_loss(x, g, b):
        rm = np.zeros(3)
        rv = np.ones(3)
        return (batch_norm(x, g, b, rm, rv, training=True) * r).sum()

    checks.append(("batch_norm", grad_check(bn_loss, [x, g, bb], STEP)))
    return checks


def _prime_batchnorm(module: Module, rng) -> None:
    """Give every BatchNorm plausible frozen statistics and switch to eval.

    Training-mode batch statistics couple all voxels of a channel, leaving
    some weight directions with analytic gradients below what central
    differences can resolve on top of an O(1) loss. The dedicated
    batch_norm op check covers the batch-statistics gradient path; block
    checks run against frozen stats.
    """
    from .nn import BatchNorm3d

    stack = [module]
    while stack:
        m = stack.pop()
        if isinstance(m, BatchNorm3d):
            m.running_mean[...] = rng.normal(0.0, 0.2, size=m.running_mean.shape)
            m.running_var[...] = rng.uniform(0.5, 1.5, size=m.running_var.shape)
            m.stats_steps[0] = 1
        stack.extend(m._children.values())
    module.eval()


def _check_module(module: Module, x: Tensor, cap_per_tensor: int, rng,
                  param_stride: int = 1) -> float:
    # grad_check mutates tensors in place, so the loss closure can ignore
    # its arguments and just re-run the module.
    params = [p for _, p in module.named_parameters()][::param_stride]
    projection = None

    def loss_fn(*_):
        nonlocal projection
        out = module(x)
        if projection is None:
            # mean-scale keeps the loss O(1), so difference-quotient
            # cancellation noise stays below the 1e-8 gradient floor
            projection = Tensor(
                np.random.default_rng(99).standard_normal(out.shape) / out.data.size)
        return (out * projection).sum()

    return grad_check(loss_fn, [x] + params, STEP,
                      max_coords_per_input=cap_per_tensor, rng=rng)


def block_grad_checks(seed: int = 0, cap_per_tensor: int = 24) -> list[tuple[str, float]]:
    """Composite-block checks at tiny dims: M2AE, G2MCIM, VRUM, full model."""
    rng = np.random.default_rng(seed)
    results: list[tuple[str, float]] = []

    m2ae = M2AE(M2aeSpec(1, 8), np.random.default_rng(seed + 17), dtype=np.float64)
    x = _t(rng, 1, 1, 6, 6, 6)
    results.append(("m2ae_block", _check_module(m2ae, x, cap_per_tensor, rng)))

    fusion = G2MCIM(4, rng=np.random.default_rng(seed + 31), dtype=np.float64)
    feats = [_t(rng, 1, 4, 2, 2, 2) for _ in range(4)]

    def fusion_loss(*_):
        return (fusion(feats) ** 2).mean()

    results.append(("g2mcim_block", grad_check(
        fusion_loss, feats + [p for _, p in fusion.named_parameters()], STEP,
        max_coords_per_input=cap_per_tensor, rng=rng)))

    vrum = VRUM(VrumSpec(4, 4, 2), np.random.default_rng(seed + 47), dtype=np.float64)
    _prime_batchnorm(vrum, rng)
    x = _t(rng, 1, 4, 3, 3, 3)
    results.append(("vrum_block", _check_module(vrum, x, cap_per_tensor, rng)))

    model = GmlnModel(tiny_config(), seed=seed + 63, dtype=np.float64)
    _prime_batchnorm(model, rng)
    x = _t(rng, 1, 4, 16, 16, 16)
    results.append(("gmln_model", _check_module(
        model, x, max(4, cap_per_tensor // 4), rng, param_stride=7)))
    return results


def full_suite(seeds=(0, 1, 2)) -> list[tuple[str, float]]:
    """Per-op checks plus composite blocks across seeds; returns worst error per name."""
    worst: dict[str, float] = {}
    for seed in seeds:
        for name, err in op_grad_checks(seed) + block_grad_checks(seed):
            worst[name] = max(worst.get(name, 0.0), err)
    return sorted(worst.items())
