import math

import numpy as np
import pytest

from dualguard.dynamics import (Bicycle3D, ControlBounds, DoubleIntegrator, Dubins3D, Integrator1D,
                                make_model)


def test_dubins_flow_and_straight_step():
    m = Dubins3D()
    assert np.allclose(m.flow([0, 0, 0], [0.0]), [2.0, 0.0, 0.0])
    x = m.step([0.0, 0.0, 0.0], [0.0], dt=0.5)
    assert np.allclose(x, [1.0, 0.0, 0.0])


def test_dubins_rk4_matches_circular_arc():
    m = Dubins3D()
    x = np.array([0.0, 0.0, 0.0])
    for _ in range(50):
        x = m.step(x, [3.0], dt=0.02)
    r = 2.0 / 3.0
    th = 3.0
    expected = [r * math.sin(th), r * (1 - math.cos(th)), th - 2 * math.pi if th >= math.pi else th]
    assert np.allclose(x, expected, atol=1e-6)


def test_heading_wraps():
    m = Dubins3D()
    x = m.step([0.0, 0.0, math.pi - 0.01], [3.0], dt=0.02)
    assert -math.pi <= x[2] < math.pi


def test_bicycle_straight_line():
    m = Bicycle3D()
    assert np.allclose(m.flow([0, 0, 0], [1.0, 0.0], [0.0, 0.0]), [1.0, 0.0, 0.0])


def test_flow_rejects_out_of_bound_controls():
    with pytest.raises(AssertionError):
        Dubins3D().flow([0, 0, 0], [4.0])


def test_dubins_bang_bang():
    m = Dubins3D()
    u, _, _ = m.hamiltonian_extrema([0, 0, 0], [0, 0, 1.0])
    assert u[0] == 3.0
    u, _, _ = m.hamiltonian_extrema([0, 0, 0], [0, 0, -1.0])
    assert u[0] == -3.0
    u, _, _ = m.hamiltonian_extrema([0, 0, 0], [0, 0, -1.0], maximize_control=False)
    assert u[0] == 3.0


def test_flat_gradient_returns_midpoint():
    u, _, _ = Bicycle3D().hamiltonian_extrema([0, 0, 0], [0.0, 0.0, 0.0])
    assert np.allclose(u, [1.05, 0.0])


def test_integrator_extremum():
    u, _, val = Integrator1D().hamiltonian_extrema([0.0], [-2.0])
    assert u[0] == -1.0 and val == pytest.approx(2.0)


def test_bicycle_disturbance_extremum():
    _, d, val = Bicycle3D().hamiltonian_extrema([0, 0, 0], [1.0, 0.0, 0.0], maximize_control=False)
    # argmin_u max_d: d maximises p.f
    assert d[0] == pytest.approx(0.1)
    assert val == pytest.approx(0.7 + 0.1)


def test_batch_matches_single():
    m = Dubins3D()
    xs = np.random.default_rng(0).uniform(-1, 1, (5, 3))
    batch = m.step(xs, [1.0])
    for x, b in zip(xs, batch):
        assert np.allclose(m.step(x, [1.0]), b)


def test_flow_bounds():
    comp, norm = Dubins3D().flow_bounds(np.zeros((1, 3)))
    assert np.allclose(comp[0], [2.0, 0.0, 3.0])
    assert norm[0] == pytest.approx(math.sqrt(13))
    comp, _ = DoubleIntegrator().flow_bounds(np.array([[0.0, -1.5]]))
    assert np.allclose(comp[0], [1.5, 1.0])


def test_make_model():
    m = make_model({"type": "bicycle3d", "max_steer_deg": 20})
    assert m.max_steer == pytest.approx(math.radians(20))
    with pytest.raises(ValueError):
        make_model({"type": "unicycle"})


def test_control_bounds():
    b = ControlBounds.symmetric(3.0)
    assert b.contains([2.9]) and not b.contains([3.1])
    assert np.allclose(b.clip([5.0]), [3.0])
    with pytest.raises(ValueError):
        ControlBounds((1.0,), (0.0,))


def test_rk4_is_fourth_order_on_dubins_arc():
    m = Dubins3D()
    r, T = 2.0 / 3.0, 0.6
    exact = np.array([r * math.sin(3 * T), r * (1 - math.cos(3 * T))])
    errs = []
    for n in (3, 6, 12):
        x = np.array([0.0, 0.0, 0.0])
        for _ in range(n):
            x = m.step(x, [3.0], dt=T / n)
        errs.append(np.linalg.norm(x[:2] - exact))
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(16, rel=0.1)


def _box(bounds, n):
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(bounds.lower, bounds.upper)]
    if not axes:
        return np.zeros((1, 0))
    return np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)


@pytest.mark.parametrize("model", [Dubins3D(), Bicycle3D(), DoubleIntegrator()])
def test_hamiltonian_matches_brute_force(model):
    rng = np.random.default_rng(1)
    us = _box(model.control_bounds, 101)
    # the disturbance grid is coarser to bound memory; it still holds the corners
    ds = _box(model.disturbance_bounds, 21)
    for _ in range(8):
        x = rng.uniform(-1, 1, model.state_dim)
        p = rng.normal(size=model.state_dim)
        xs = np.broadcast_to(x, (len(us) * len(ds), model.state_dim))
        uu = np.repeat(us, len(ds), axis=0)
        dd = np.tile(ds, (len(us), 1))
        vals = (model.flow(xs, uu, dd if ds.shape[1] else None) @ p).reshape(len(us), len(ds))
        _, _, v_safe = model.hamiltonian_extrema(x, p, maximize_control=True)
        _, _, v_solver = model.hamiltonian_extrema(x, p, maximize_control=False)
        assert v_safe == pytest.approx(vals.min(axis=1).max(), abs=1e-9)
        assert v_solver == pytest.approx(vals.max(axis=1).min(), abs=1e-9)
