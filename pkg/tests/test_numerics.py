from __future__ import annotations

import math

import numpy as np
import pytest

from components.errors import DomainError, ParameterError, RangeError
from components.numerics import (
    Grid,
    SampledFunction,
    bessel_j0,
    erf,
    invert_monotone,
    quad,
    quad_values,
)


def _j0_series(x: float, terms: int = 60) -> float:
    q = (x / 2.0) ** 2
    term, total = 1.0, [1.0]
    for k in range(1, terms):
        term *= -q / (k * k)
        total.append(term)
    return math.fsum(total)


def test_grid_rejects_bad_input():
    with pytest.raises(ParameterError):
        Grid(0.0, 1.0, 1)
    with pytest.raises(ParameterError):
        Grid(1.0, 1.0, 10)
    with pytest.raises(ParameterError):
        Grid(0.0, float("inf"), 10)


def test_grid_weights_sum_to_length():
    g = Grid(-2.0, 3.0, 101)
    assert g.weights.sum() == pytest.approx(5.0, abs=1e-12)
    assert g.h == pytest.approx(0.05)
    assert g.points[0] == -2.0 and g.points[-1] == 3.0


def test_grid_arrays_are_read_only():
    g = Grid(0.0, 1.0, 5)
    with pytest.raises(ValueError):
        g.points[0] = 1.0


def test_quad_polynomial():
    g = Grid(0.0, 1.0, 1001)
    assert quad(g.sample(lambda x: x**2)) == pytest.approx(1.0 / 3.0, abs=1e-6)


def test_quad_values_stacks_rows():
    g = Grid(0.0, 2.0, 201)
    rows = np.vstack([np.ones(g.n), g.points])
    assert quad_values(g, rows) == pytest.approx([2.0, 2.0], abs=1e-12)


@pytest.mark.parametrize("x", [0.0, 0.3, 1.0, 2.404825557695773, 4.0, 7.5, 10.0])
def test_bessel_j0_matches_power_series(x):
    assert bessel_j0(x) == pytest.approx(_j0_series(x), abs=1e-11)


def test_bessel_j0_scalar_and_array():
    assert isinstance(bessel_j0(0.0), float)
    assert bessel_j0(0.0) == 1.0
    out = bessel_j0(np.array([0.0, 1.0, 2.0]))
    assert out.shape == (3,)


def test_bessel_j0_rejects_non_finite():
    with pytest.raises(DomainError):
        bessel_j0(float("nan"))
    with pytest.raises(DomainError):
        bessel_j0(np.array([1.0, np.inf]))


def test_erf_values():
    assert erf(0.0) == 0.0
    assert erf(1.0) == pytest.approx(0.8427007929497149, abs=1e-15)
    assert erf(-2.0) == pytest.approx(-erf(2.0))
    with pytest.raises(DomainError):
        erf(float("inf"))


def test_sampled_function_interpolates_and_vanishes_outside():
    g = Grid(0.0, 1.0, 11)
    f = g.sample(lambda x: 2.0 * x)
    assert f(0.25) == pytest.approx(0.5)
    assert f(-0.1) == 0.0
    assert f(1.5) == 0.0


def test_sampled_function_arithmetic_needs_same_grid():
    a = Grid(0.0, 1.0, 11).sample(np.sin)
    b = Grid(0.0, 2.0, 11).sample(np.sin)
    with pytest.raises(ParameterError):
        a + b
    assert (a * 2.0).values == pytest.approx(2.0 * a.values)
    assert (3.0 * a).values == pytest.approx(3.0 * a.values)


def test_sampled_function_rejects_nan():
    with pytest.raises(ParameterError):
        SampledFunction(Grid(0.0, 1.0, 3), [0.0, np.nan, 1.0])


def test_norm_of_constant():
    f = SampledFunction(Grid(0.0, 4.0, 9), np.full(9, 0.5))
    assert f.norm() == pytest.approx(1.0)


def test_invert_monotone_quadratic():
    g = Grid(0.0, 2.0, 2001)
    f = g.sample(lambda x: x**2 + x)
    root = invert_monotone(f, 1.5)
    assert isinstance(root, float)
    assert root == pytest.approx((-1.0 + math.sqrt(7.0)) / 2.0, abs=1e-6)


def test_invert_monotone_vector_and_endpoints():
    g = Grid(0.0, 1.0, 101)
    f = g.sample(lambda x: 3.0 * x)
    roots = invert_monotone(f, np.array([0.0, 1.5, 3.0]))
    assert roots == pytest.approx([0.0, 0.5, 1.0], abs=1e-9)


def test_invert_monotone_errors():
    g = Grid(0.0, 1.0, 11)
    with pytest.raises(RangeError):
        invert_monotone(g.sample(lambda x: x), 2.0)
    with pytest.raises(ParameterError):
        invert_monotone(g.sample(lambda x: (x - 0.5) ** 2), 0.1)
