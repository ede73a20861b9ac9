"""Converged Hamilton-Jacobi safety value functions on grids.

The solver marches the minimum-over-time reachability value backward in
fictitious time with a Lax-Friedrichs scheme (first order, or ENO2 with
TVD-RK2 stepping) until the update stalls.  Its output, :class:`ValueField`, answers value, BRT membership and
optimal-safe-control queries and round-trips through a small binary format.
"""
from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import contourpy
import numpy as np

from . import _kernels
from .dynamics import DynamicsModel
from .grid import Grid, ScalarField, interpolate, node_gradients, stacked_channels

log = logging.getLogger(__name__)

MAGIC = b"HJVF"
VERSION = 1


class SolverError(RuntimeError):
    """The value iteration did not converge within the iteration budget."""

    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = residuals


class FormatError(ValueError):
    """A value-field file is malformed."""


@dataclass(frozen=True)
class SolverParams:
    cfl: float = 0.5
    tolerance: float = 1e-4
    max_iterations: int = 20000
    # run exactly this many sweeps and skip the convergence test
    fixed_iterations: int | None = None
    # 1: one-sided differences + forward Euler; 2: ENO2 + TVD-RK2
    order: int = 2

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("scheme order must be 1 or 2")
        if not 0 < self.cfl <= 1:
            raise ValueError("CFL number must lie in (0, 1]")
        if self.tolerance <= 0:
            raise ValueError("convergence tolerance must be positive")


@dataclass(frozen=True)
class ValueField:
    field: ScalarField
    model_id: str
    iterations: int = 0
    residual: float = float("inf")
    dt_pde: float = 0.0
    dissipation: tuple[float, ...] = ()
    residual_history: tuple[float, ...] = ()
    invariant_violations: int = 0
    _channels: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._channels is None:
            object.__setattr__(self, "_channels", stacked_channels(self.field))

    @property
    def grid(self) -> Grid:
        return self.field.grid

    @property
    def channels(self) -> np.ndarray:
        """Value and gradient channels, shape (1 + n, N)."""
        return self._channels

    def kernel_args(self):
        return (self._channels, *self.grid.kernel_args())

    def brt_fraction(self) -> float:
        return float(np.mean(self.field.values <= 0.0))


def _failure_samples(failure, grid: Grid) -> np.ndarray:
    if isinstance(failure, ScalarField):
        return np.array(failure.values)
    nodes = grid.nodes()
    if hasattr(failure, "l"):
        return np.asarray(failure.l(nodes), dtype=float)
    return np.asarray(failure(nodes), dtype=float).reshape(-1)


def solve(model: DynamicsModel, failure, grid: Grid, params: SolverParams | None = None,
          callback: Callable[[int, np.ndarray], None] | None = None) -> ValueField:
    """Converged value function of the minimum-over-time safety game.

    ``failure`` is an environment exposing ``l``, a callable on (N, n) node
    arrays, or a ScalarField of l samples.  Each sweep applies

        V <- min(V, l, V + dt * (H(x, p_avg) + sum_i a_i (p_i+ - p_i-) / 2))

    with H = max_u min_d p.f.  With ``order=2`` the one-sided differences are
    ENO2 reconstructions and the candidate is a two-stage TVD-RK2 step.
    The extra min with the previous iterate keeps the sequence
    non-increasing at every node.  ``callback(it, V)`` sees every
    iterate.
    """
    params = params or SolverParams()
    if grid.ndim != model.state_dim:
        raise ValueError(f"grid has {grid.ndim} dimensions but model {model.name} "
                         f"has state dimension {model.state_dim}")
    for k in model.periodic_dims:
        if not grid.periodic[k]:
            raise ValueError(f"dimension {k} of {model.name} is periodic; grid must be too")
    lvals = np.ascontiguousarray(_failure_samples(failure, grid))
    if lvals.shape != (grid.size,) or not np.all(np.isfinite(lvals)):
        raise ValueError("failure function must give one finite value per node")

    code, mparams, _, ubounds, dbounds = model.kernel_args()
    comp, _ = model.flow_bounds(grid.nodes())
    alpha = np.ascontiguousarray(comp.max(axis=0))
    lo, h, counts, periodic, strides = grid.kernel_args()
    rate = float(np.sum(alpha / h))
    dt = params.cfl / rate if rate > 0 else 1.0

    v = lvals.copy()
    nxt = np.empty_like(v)
    rate1 = np.empty_like(v)
    rate2 = np.empty_like(v)
    history: list[float] = []
    violations = 0
    budget = params.fixed_iterations if params.fixed_iterations is not None else params.max_iterations
    it = 0
    converged = params.fixed_iterations is not None
    while it < budget:
        _kernels.lf_rhs(code, mparams, ubounds, dbounds, v, lo, h, counts, periodic, strides,
                        alpha, params.order, rate1)
        cand = v + dt * rate1
        if params.order == 2:
            _kernels.lf_rhs(code, mparams, ubounds, dbounds, cand, lo, h, counts, periodic,
                            strides, alpha, 2, rate2)
            cand = 0.5 * (v + cand + dt * rate2)
        resid = _kernels.tube_update(v, lvals, cand, nxt)
        violations += int(np.count_nonzero(nxt > v)) + int(np.count_nonzero(nxt > lvals))
        v, nxt = nxt, v
        it += 1
        history.append(resid)
        if callback is not None:
            callback(it, v)
        if params.fixed_iterations is None and resid < params.tolerance:
            converged = True
            break
        if it % 500 == 0:
            log.info("sweep %d residual %.3e", it, resid)
    if not converged:
        raise SolverError(
            f"value iteration did not converge in {it} sweeps "
            f"(last residual {history[-1] if history else float('nan'):.3e})", history)
    residual = history[-1] if history else float("inf")
    return ValueField(ScalarField(grid, v), model.identifier, it, residual, dt,
                      tuple(float(a) for a in alpha), tuple(history), violations)


def value(vf: ValueField, x, return_flag: bool = False):
    """V(x) by multilinear interpolation; clamped queries are flagged."""
    return interpolate(vf.field, x, return_flag=return_flag)


def value_and_gradient(vf: ValueField, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    vals, flags = _kernels.interp_batch(vf.channels, *vf.grid.kernel_args(),
                                        np.ascontiguousarray(x.reshape(-1, vf.grid.ndim)))
    if x.ndim <= 1:
        return vals[0], bool(flags[0])
    return vals, flags


def brt_contains(vf: ValueField, x):
    v = value(vf, x)
    return v <= 0.0 if np.ndim(v) else bool(v <= 0.0)


def optimal_safe_control(vf: ValueField, model: DynamicsModel, x) -> np.ndarray:
    """argmax_u min_d grad V(x) . f(x, u, d); a flat gradient gives the midpoint."""
    vals, _ = value_and_gradient(vf, x)
    vals = np.asarray(vals)
    grad = vals[..., 1:]
    u, _, _ = model.hamiltonian_extrema(x, grad, maximize_control=True)
    return u


def lipschitz_bound(vf: ValueField) -> float:
    """Euclidean bound on |grad V| from the largest node-to-node slopes."""
    grid = vf.grid
    arr = vf.field.as_array()
    slopes = []
    for k, hk in enumerate(grid.spacing):
        if grid.periodic[k]:
            diff = np.roll(arr, -1, axis=k) - arr
        else:
            diff = np.diff(arr, axis=k)
        slopes.append(float(np.max(np.abs(diff))) / hk)
    return float(np.sqrt(np.sum(np.square(slopes))))


def switching_band(vf: ValueField, model: DynamicsModel, dt: float) -> float:
    """Largest value drop achievable in one step: L_V * v_max * dt."""
    _, speed = model.flow_bounds(vf.grid.nodes())
    return lipschitz_bound(vf) * float(speed.max()) * dt


def gradient_field(vf: ValueField) -> np.ndarray:
    return node_gradients(vf.field)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def save(vf: ValueField, path) -> None:
    grid = vf.grid
    model_id = vf.model_id.encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, grid.ndim)]
    for lo, hi, c, per in zip(grid.lower, grid.upper, grid.counts, grid.periodic):
        parts.append(struct.pack("<ddQB", lo, hi, c, int(per)))
    parts.append(struct.pack("<I", len(model_id)))
    parts.append(model_id)
    parts.append(np.ascontiguousarray(vf.field.values, dtype="<f8").tobytes())
    parts.append(struct.pack("<dQ", vf.residual, vf.iterations))
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise FormatError("value-field file is truncated")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def raw(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise FormatError("value-field file is truncated")
        out = self.data[self.pos:self.pos + size]
        self.pos += size
        return out


def load(path, expected_model: str | None = None) -> ValueField:
    """Read a value field; warns when ``expected_model`` differs from the file's."""
    r = _Reader(Path(path).read_bytes())
    if r.raw(4) != MAGIC:
        raise FormatError(f"{path}: not a value-field file (bad magic)")
    version, n = r.take("<II")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n == 0:
        raise FormatError(f"{path}: zero-dimensional grid")
    lower, upper, counts, periodic = [], [], [], []
    for _ in range(n):
        lo, hi, c, per = r.take("<ddQB")
        lower.append(lo)
        upper.append(hi)
        counts.append(c)
        periodic.append(bool(per))
    try:
        grid = Grid(tuple(lower), tuple(upper), tuple(counts), tuple(periodic))
    except ValueError as exc:
        raise FormatError(f"{path}: inconsistent grid header ({exc})") from exc
    (nbytes,) = r.take("<I")
    model_id = r.raw(nbytes).decode("utf-8")
    values = np.frombuffer(r.raw(8 * grid.size), dtype="<f8").astype(float)
    residual, iterations = r.take("<dQ")
    if r.pos != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.pos} trailing bytes after payload")
    if expected_model is not None and expected_model != model_id:
        warnings.warn(f"value field was solved for {model_id!r}, not {expected_model!r}",
                      stacklevel=2)
    return ValueField(ScalarField(grid, values), model_id, int(iterations), float(residual))


# --------------------------------------------------------------------------
# slices
# --------------------------------------------------------------------------

def planar_slice(vf: ValueField, heading: float, dims: tuple[int, int] = (0, 1),
                 fixed: dict[int, float] | None = None):
    """V on the grid nodes of two dimensions with the others held fixed.

    Returns (axis0, axis1, values) with values shaped (len(axis0), len(axis1)).
    """
    grid = vf.grid
    fixed = dict(fixed or {})
    others = [k for k in range(grid.ndim) if k not in dims]
    if len(others) == 1 and others[0] not in fixed:
        fixed[others[0]] = heading
    missing = [k for k in others if k not in fixed]
    if missing:
        raise ValueError(f"slice leaves dimensions {missing} unspecified")
    if any(k >= grid.ndim for k in list(dims) + list(fixed)):
        raise ValueError(f"slice dimensions exceed the field's {grid.ndim} dimensions")
    a0, a1 = grid.axis(dims[0]), grid.axis(dims[1])
    g0, g1 = np.meshgrid(a0, a1, indexing="ij")
    pts = np.zeros((g0.size, grid.ndim))
    pts[:, dims[0]] = g0.ravel()
    pts[:, dims[1]] = g1.ravel()
    for k, val in fixed.items():
        pts[:, k] = val
    vals = interpolate(vf.field, pts)
    return a0, a1, np.asarray(vals).reshape(g0.shape)


def zero_level_contours(vf: ValueField, heading: float, level: float = 0.0) -> list[np.ndarray]:
    """Marching-squares contour lines of a fixed-heading slice, as (M, 2) arrays."""
    a0, a1, vals = planar_slice(vf, heading)
    g0, g1 = np.meshgrid(a0, a1, indexing="ij")
    gen = contourpy.contour_generator(g0, g1, vals, name="serial")
    return [np.asarray(line) for line in gen.lines(level)]


def polygon_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))
