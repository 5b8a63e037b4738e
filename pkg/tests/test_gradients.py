"""Gradient verification: per-op checks plus the grad_check API contract.

One seed here keeps the run quick; the acceptance suite sweeps three.
"""

import numpy as np
import pytest

from gmlnbts.check import grad_check
from gmlnbts.errors import DataError, SpecError
from gmlnbts.tensor import Tensor
from gmlnbts.verification import GRAD_TOL, block_grad_checks, op_grad_checks


def test_every_op_passes_gradcheck():
    for name, err in op_grad_checks(seed=0):
        assert err < GRAD_TOL, f"{name}: {err}"


def test_composite_blocks_pass_gradcheck():
    for name, err in block_grad_checks(seed=0, cap_per_tensor=12):
        assert err < GRAD_TOL, f"{name}: {err}"


def test_linear_map_exact():
    x = Tensor(np.random.default_rng(0).standard_normal(5), requires_grad=True)
    err = grad_check(lambda t: (t * 3.0).sum(), [x], 1e-5)
    assert err < 1e-10


def test_requires_float64():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(SpecError, match="float64"):
        grad_check(lambda t: t.sum(), [x])


def test_requires_scalar_output():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(SpecError, match="scalar"):
        grad_check(lambda t: t * 2.0, [x])


def test_nonfinite_reported_with_coordinate():
    x = Tensor(np.array([1.0, 0.0]), requires_grad=True)
    with np.errstate(all="ignore"):
        with pytest.raises(DataError, match="coordinate 1"):
            grad_check(lambda t: (t ** 0.5).sum(), [x], 1e-5)


def test_coordinate_sampling_bounds_work():
    x = Tensor(np.random.default_rng(1).standard_normal(100), requires_grad=True)
    err = grad_check(lambda t: (t ** 2).sum(), [x], 1e-5, max_coords_per_input=5,
                     rng=np.random.default_rng(0))
    assert err < 1e-8
