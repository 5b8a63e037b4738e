"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .errors import DataError, SpecError
from .tensor import Tensor, no_grad, trace_activation_signs


def _signs_match(a: list, b: list) -> bool:
    if len(a) != len(b):
        return False
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(fn, inputs: list[Tensor], h: float = 1e-5,
               max_coords_per_input: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients of a scalar-valued tensor program against
    central differences, returning the worst relative error.

    ``fn`` must be deterministic and the inputs float64; relative error per
    coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``. Large inputs can be
    spot-checked by bounding ``max_coords_per_input`` (coordinates drawn
    without replacement from ``rng``).

    Coordinates whose +-h interval flips the sign of any rectifier input
    sit on a non-differentiable point and are excluded; the difference
    quotient does not estimate a derivative there.
    """
    for i, t in enumerate(inputs):
        if t.dtype != np.float64:
            raise SpecError(f"grad_check requires float64 inputs, input {i} is {t.dtype}")
        if not t.requires_grad:
            raise SpecError(f"input {i} does not require gradients")
        t.grad = None

    loss = fn(*inputs)
    if loss.data.size != 1:
        raise SpecError(f"fn must return a scalar, got shape {loss.shape}")
    loss.backward()
    analytic = []
    for i, t in enumerate(inputs):
        if t.grad is None:
            analytic.append(np.zeros_like(t.data))
        else:
            analytic.append(t.grad.copy())

    worst = 0.0
    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        n_coords = flat.size
        if max_coords_per_input is not None and n_coords > max_coords_per_input:
            gen = rng or np.random.default_rng(0)
            coords = gen.choice(n_coords, size=max_coords_per_input, replace=False)
        else:
            coords = range(n_coords)
        a_flat = analytic[i].reshape(-1)
        for j in coords:
            orig = flat[j]
            with no_grad():
                with trace_activation_signs() as signs_plus:
                    flat[j] = orig + h
                    f_plus = float(fn(*inputs).data)
                with trace_activation_signs() as signs_minus:
                    flat[j] = orig - h
                    f_minus = float(fn(*inputs).data)
            flat[j] = orig
            if not _signs_match(signs_plus, signs_minus):
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            if not np.isfinite(numeric) or not np.isfinite(a_flat[j]):
                raise DataError(
                    f"non-finite gradient at input {i}, coordinate {int(j)}: "
                    f"analytic={a_flat[j]!r}, numeric={numeric!r}")
            rel = abs(a_flat[j] - numeric) / max(abs(a_flat[j]), abs(numeric), 1e-8)
            if rel > worst:
                worst = float(rel)
    return worst
