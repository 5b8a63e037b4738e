"""Autograd-level volumetric ops: worked examples and invariants."""

import numpy as np
import pytest

from gmlnbts.errors import ShapeError, SpecError
from gmlnbts.tensor import Tensor
from gmlnbts.volume_ops import (ConvSpec, avg_pool3d, conv3d, conv_transpose3d,
                                global_avg_pool, trilinear_upsample3d)


def vol(data):
    return Tensor(np.asarray(data, dtype=np.float64))


def test_conv3d_identity_kernel():
    rng = np.random.default_rng(0)
    x = vol(rng.standard_normal((2, 1, 3, 4, 5)))
    w = vol(np.ones((1, 1, 1, 1, 1)))
    assert np.allclose(conv3d(x, w).data, x.data)


def test_conv3d_axis_example():
    x = vol(np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 1, 3))
    w = vol(np.ones((1, 1, 1, 1, 3)))
    y = conv3d(x, w, padding=(0, 0, 1))
    assert np.allclose(y.data.ravel(), [3.0, 6.0, 5.0])


def test_conv_transpose_one_axis_example():
    x = vol(np.array([1.0, 2.0]).reshape(1, 1, 1, 1, 2))
    w = vol(np.ones((1, 1, 1, 1, 2)))
    y = conv_transpose3d(x, w, stride=(1, 1, 2))
    assert np.allclose(y.data.ravel(), [1.0, 1.0, 2.0, 2.0])


def test_avg_pool_center_spike():
    x = np.zeros((1, 1, 3, 3, 3))
    x[0, 0, 1, 1, 1] = 1.0
    y = avg_pool3d(vol(x))
    assert abs(y.data[0, 0, 1, 1, 1] - 1 / 27) < 1e-12
    assert y.shape == (1, 1, 3, 3, 3)


def test_avg_pool_constant_interior():
    y = avg_pool3d(vol(np.full((1, 2, 5, 5, 5), 3.25)))
    assert abs(y.data[0, 0, 2, 2, 2] - 3.25) < 1e-12


def test_global_avg_pool():
    x = np.zeros((1, 1, 1, 2, 2))
    x[0, 0, 0] = [[1.0, 2.0], [3.0, 4.0]]
    assert np.allclose(global_avg_pool(vol(x)).data, [[2.5]])
    out = global_avg_pool(vol(np.full((2, 64, 8, 8, 8), 1.5)))
    assert out.shape == (2, 64)
    assert np.allclose(out.data, 1.5)


def test_trilinear_examples():
    x = vol(np.array([0.0, 2.0]).reshape(1, 1, 1, 1, 2))
    y = trilinear_upsample3d(x, (1, 1, 2))
    assert np.allclose(y.data.ravel(), [0.0, 0.5, 1.5, 2.0])

    const = vol(np.full((1, 3, 4, 4, 4), 7.5))
    up = trilinear_upsample3d(const, 2)
    assert up.shape == (1, 3, 8, 8, 8)
    assert np.allclose(up.data, 7.5)

    x = vol(np.zeros((1, 2, 8, 8, 8)))
    assert trilinear_upsample3d(x, 2).shape == (1, 2, 16, 16, 16)


def test_trilinear_preserves_bounds_and_constant_mean(rng):
    x = rng.standard_normal((1, 2, 5, 6, 4))
    y = trilinear_upsample3d(vol(x), 2).data
    assert y.min() >= x.min() - 1e-12
    assert y.max() <= x.max() + 1e-12
    c = np.full((1, 1, 3, 3, 3), 0.31)
    assert trilinear_upsample3d(vol(c), 3).data.mean() == pytest.approx(0.31, abs=0)


def test_trilinear_rejects_bad_factor():
    with pytest.raises(SpecError):
        trilinear_upsample3d(vol(np.zeros((1, 1, 2, 2, 2))), 0)


def test_conv_spec_validation():
    with pytest.raises(SpecError):
        ConvSpec.conv(2, 3, kernel=3, padding=3)
    with pytest.raises(SpecError):
        ConvSpec.transpose(2, 3, kernel=3, stride=2, output_padding=2)
    with pytest.raises(SpecError):
        ConvSpec(0, 3, (3, 3, 3))
    spec = ConvSpec.transpose(2, 3, 4, 2, 1, 1)
    assert spec.transposed and spec.output_padding == (1, 1, 1)


def test_conv3d_shape_error_names_axis():
    x = vol(np.zeros((1, 2, 4, 4, 4)))
    with pytest.raises(ShapeError, match="channel"):
        conv3d(x, vol(np.zeros((3, 4, 3, 3, 3))))
    with pytest.raises(ShapeError, match="depth"):
        conv3d(x, vol(np.zeros((3, 2, 5, 3, 3))))  # kernel exceeds depth


def test_public_adjoint_identity(rng):
    # <conv3d(x; W), y> == <x, conv_transpose3d(y; W)> when the conv weight
    # (Cout, Cin, k...) is read with its leading axis as the transposed
    # op's input channels
    x = Tensor(rng.standard_normal((1, 3, 6, 6, 6)))
    w = Tensor(rng.standard_normal((2, 3, 3, 3, 3)))
    y = Tensor(rng.standard_normal((1, 2, 3, 3, 3)))
    lhs = float((conv3d(x, w, stride=2, padding=1).data * y.data).sum())
    back = conv_transpose3d(y, w, stride=2, padding=1, output_padding=1)
    rhs = float((x.data * back.data).sum())
    assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs))
