import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualguard.grid import (Grid, OutOfDomainError, ScalarField, gradient, interpolate,
                            node_gradients, state_to_cell)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid((0.0,), (1.0,), (2,))
    with pytest.raises(ValueError):
        Grid((1.0,), (1.0,), (5,))
    with pytest.raises(ValueError):
        Grid((0.0, 0.0), (1.0,), (5, 5))


def test_periodic_spacing_covers_one_period():
    g = Grid((0.0, -math.pi), (1.0, math.pi), (11, 8), (False, True))
    assert g.spacing[0] == pytest.approx(0.1)
    assert g.spacing[1] == pytest.approx(2 * math.pi / 8)
    assert g.axis(1)[-1] < math.pi


def test_state_to_cell_examples():
    g = Grid((0.0,), (1.0,), (11,))
    cells, off = state_to_cell(g, [0.25])
    assert cells[0] == 2 and off[0] == pytest.approx(0.5)
    cells, off = state_to_cell(g, [1.0])
    assert cells[0] == 9 and off[0] == pytest.approx(1.0)
    with pytest.raises(OutOfDomainError):
        state_to_cell(g, [1.01])


def test_state_to_cell_wraps_periodic():
    g = Grid((-math.pi,), (math.pi,), (8,), (True,))
    a = state_to_cell(g, [0.3])
    b = state_to_cell(g, [0.3 + 2 * math.pi])
    assert np.array_equal(a[0], b[0])
    assert np.allclose(a[1], b[1])


def test_interpolation_reproduces_bilinear_functions():
    g = Grid((0.0, 0.0), (2.0, 1.0), (5, 3))
    f = ScalarField.sample(g, lambda p: 1.0 + 2.0 * p[:, 0] - 3.0 * p[:, 1] + p[:, 0] * p[:, 1])
    x = np.array([1.3, 0.7])
    assert interpolate(f, x) == pytest.approx(1.0 + 2.6 - 2.1 + 0.91)


def test_interpolation_clamps_and_flags():
    g = Grid((0.0,), (1.0,), (11,))
    f = ScalarField.sample(g, lambda p: p[:, 0])
    v, flag = interpolate(f, [1.5], return_flag=True)
    assert v == pytest.approx(1.0) and flag
    v, flag = interpolate(f, [0.74], return_flag=True)
    assert v == pytest.approx(0.74) and not flag


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.integers(-3, 3))
def test_periodic_queries_are_shift_invariant(theta, k):
    g = Grid((0.0, -math.pi), (1.0, math.pi), (5, 16), (False, True))
    f = ScalarField.sample(g, lambda p: np.sin(p[:, 1]) + p[:, 0])
    a = interpolate(f, [0.4, theta])
    b = interpolate(f, [0.4, theta + 2 * math.pi * k])
    assert a == pytest.approx(b, abs=1e-9)


def test_gradient_of_quadratic():
    g = Grid((-1.0,), (1.0,), (201,))
    f = ScalarField.sample(g, lambda p: p[:, 0] ** 2)
    assert gradient(f, [0.5])[0] == pytest.approx(1.0, abs=1e-9)
    grads = node_gradients(f)
    assert grads.shape == (1, 201)


def test_field_validation():
    g = Grid((0.0,), (1.0,), (3,))
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros(4))
    with pytest.raises(ValueError):
        ScalarField(g, np.array([0.0, np.nan, 1.0]))
    f = ScalarField(g, np.zeros(3))
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_grid_roundtrip():
    g = Grid((0.0, -math.pi), (1.0, math.pi), (5, 8), (False, True))
    assert Grid.from_dict(g.to_dict()) == g


def test_gradient_of_linear_and_constant_fields():
    g = Grid((0.0, -1.0, -math.pi), (2.0, 1.0, math.pi), (9, 7, 12), (False, False, True))
    lin = ScalarField.sample(g, lambda p: 0.5 - 2.0 * p[:, 0] + 3.0 * p[:, 1])
    const = ScalarField.sample(g, lambda p: np.full(len(p), 4.0))
    rng = np.random.default_rng(0)
    pts = rng.uniform([0.3, -0.7, -3.0], [1.7, 0.7, 3.0], (50, 3))
    assert np.allclose(gradient(lin, pts), [-2.0, 3.0, 0.0], rtol=0, atol=1e-12)
    assert np.all(gradient(const, pts) == 0.0)


def test_gradient_of_square_example():
    g = Grid((-1.0,), (1.0,), (201,))
    f = ScalarField.sample(g, lambda p: p[:, 0] ** 2)
    assert abs(gradient(f, [0.5])[0] - 1.0) <= 1e-3


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(0.5, 2.0), st.floats(0, 6.28), st.integers(0, 2 ** 31))
def test_gradient_matches_interpolated_differences(a, b, phase, seed):
    g = Grid((0.0, 0.0), (3.0, 2.0), (61, 41))
    f = ScalarField.sample(g, lambda p: np.sin(a * p[:, 0] + phase) * np.cos(b * p[:, 1]))
    x = np.random.default_rng(seed).uniform([0.3, 0.3], [2.7, 1.7])
    grad = gradient(f, x)
    for i, h in enumerate(g.spacing):
        e = np.zeros(2)
        e[i] = h
        fd = (interpolate(f, x + e) - interpolate(f, x - e)) / (2 * h)
        assert abs(grad[i] - fd) <= 1e-2
