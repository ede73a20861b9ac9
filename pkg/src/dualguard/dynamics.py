"""Continuous-time models with box-bounded controls and disturbances.

States, controls and disturbances are numpy arrays whose last axis is the
channel axis, so every method accepts a single vector or a batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class ControlBounds:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper bounds must have the same length")
        for lo, hi in zip(self.lower, self.upper):
            if lo > hi:
                raise ValueError(f"bound lower {lo} exceeds upper {hi}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def array(self) -> np.ndarray:
        return np.array([self.lower, self.upper], dtype=float).T.reshape(self.dim, 2)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.array(self.lower) + np.array(self.upper))

    def clip(self, u) -> np.ndarray:
        return np.clip(u, self.lower, self.upper)

    def contains(self, u, tol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= np.array(self.lower) - tol) and np.all(u <= np.array(self.upper) + tol))

    @classmethod
    def symmetric(cls, *half_widths: float) -> "ControlBounds":
        return cls(tuple(-abs(w) for w in half_widths), tuple(abs(w) for w in half_widths))

    @classmethod
    def empty(cls) -> "ControlBounds":
        return cls((), ())


@dataclass(frozen=True)
class DynamicsModel:
    """Base class; concrete models fix ``code`` and the channel layout."""

    code: ClassVar[int]
    name: ClassVar[str]
    state_dim: ClassVar[int]
    periodic_dims: ClassVar[tuple[int, ...]] = ()

    @property
    def params(self) -> np.ndarray:
        return np.zeros(1)

    @property
    def control_bounds(self) -> ControlBounds:
        raise NotImplementedError

    @property
    def disturbance_bounds(self) -> ControlBounds:
        return ControlBounds.empty()

    @property
    def control_dim(self) -> int:
        return self.control_bounds.dim

    @property
    def disturbance_dim(self) -> int:
        return self.disturbance_bounds.dim

    @property
    def periodic_mask(self) -> np.ndarray:
        mask = np.zeros(self.state_dim, dtype=np.bool_)
        mask[list(self.periodic_dims)] = True
        return mask

    @property
    def identifier(self) -> str:
        """Model name plus parameters; stored in value-field files."""
        return self.name

    def _batch(self, x, u=None, d=None):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = np.ascontiguousarray(x.reshape(-1, self.state_dim))
        npts = xs.shape[0]

        def expand(a, dim):
            if a is None or dim == 0:
                return np.zeros((npts, dim))
            a = np.asarray(a, dtype=float).reshape(-1, dim)
            return np.ascontiguousarray(np.broadcast_to(a, (npts, dim)))

        return single, xs, expand(u, self.control_dim), expand(d, self.disturbance_dim)

    def check_inputs(self, u, d=None, tol: float = 1e-9):
        assert self.control_bounds.contains(u, tol), f"control {u} outside bounds"
        if d is not None and self.disturbance_dim:
            assert self.disturbance_bounds.contains(d, tol), f"disturbance {d} outside bounds"

    def flow(self, x, u, d=None) -> np.ndarray:
        """f(x, u, d).  Inputs must already lie inside their bounds."""
        self.check_inputs(u, d)
        single, xs, us, ds = self._batch(x, u, d)
        out = _kernels.flow_batch(self.code, self.params, xs, us, ds)
        return out[0] if single else out

    def step(self, x, u, d=None, dt: float = 0.02) -> np.ndarray:
        """RK4 step with (u, d) held constant; periodic components wrapped."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        single, xs, us, ds = self._batch(x, u, d)
        out = _kernels.step_batch(self.code, self.params, self.periodic_mask, xs, us, ds, float(dt))
        return out[0] if single else out

    def hamiltonian_extrema(self, x, p, maximize_control: bool = True):
        """Extremisers of p.f over the control and disturbance boxes.

        ``maximize_control=True`` returns argmax_u min_d (the safe control and
        the worst-case disturbance against it); ``False`` returns argmin_u
        max_d.  Returns ``(u*, d*, value)``.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = np.ascontiguousarray(x.reshape(-1, self.state_dim))
        ps = np.ascontiguousarray(np.broadcast_to(
            np.asarray(p, dtype=float).reshape(-1, self.state_dim), xs.shape))
        us, ds, vals = _kernels.hamiltonian_batch(
            self.code, self.params, xs, ps, self.control_bounds.array,
            self.disturbance_bounds.array.reshape(-1, 2), maximize_control)
        if single:
            return us[0], ds[0], float(vals[0])
        return us, ds, vals

    def flow_bounds(self, x):
        """Per-component max |f_i| and max ||f|| over the input boxes at x."""
        x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=float)))
        return _kernels.max_abs_flow_batch(self.code, self.params, x, self.control_bounds.array,
                                           self.disturbance_bounds.array.reshape(-1, 2))

    def kernel_args(self):
        return (self.code, self.params, self.periodic_mask, self.control_bounds.array,
                self.disturbance_bounds.array.reshape(-1, 2))


@dataclass(frozen=True)
class Integrator1D(DynamicsModel):
    """x' = u with u in [-1, 1]."""

    code: ClassVar[int] = _kernels.INTEGRATOR_1D
    name: ClassVar[str] = "integrator1d"
    state_dim: ClassVar[int] = 1

    @property
    def control_bounds(self) -> ControlBounds:
        return ControlBounds.symmetric(1.0)


@dataclass(frozen=True)
class DoubleIntegrator(DynamicsModel):
    """x' = v, v' = u with |u| <= u_max."""

    code: ClassVar[int] = _kernels.DOUBLE_INTEGRATOR
    name: ClassVar[str] = "double_integrator"
    state_dim: ClassVar[int] = 2
    u_max: float = 1.0

    @property
    def control_bounds(self) -> ControlBounds:
        return ControlBounds.symmetric(self.u_max)

    @property
    def identifier(self) -> str:
        return f"{self.name}(u_max={self.u_max:g})"


@dataclass(frozen=True)
class Dubins3D(DynamicsModel):
    """Constant-speed unicycle (x, y, theta) steered by turn rate.

    ``disturbance`` is an optional additive planar velocity bound; the
    planar-navigation task uses none.
    """

    code: ClassVar[int] = _kernels.DUBINS_3D
    name: ClassVar[str] = "dubins3d"
    state_dim: ClassVar[int] = 3
    periodic_dims: ClassVar[tuple[int, ...]] = (2,)
    speed: float = 2.0
    max_turn_rate: float = 3.0
    disturbance: float = 0.0

    @property
    def params(self) -> np.ndarray:
        return np.array([self.speed])

    @property
    def control_bounds(self) -> ControlBounds:
        return ControlBounds.symmetric(self.max_turn_rate)

    @property
    def disturbance_bounds(self) -> ControlBounds:
        return ControlBounds.symmetric(self.disturbance, self.disturbance)

    @property
    def identifier(self) -> str:
        return (f"{self.name}(speed={self.speed:g},max_turn_rate={self.max_turn_rate:g},"
                f"disturbance={self.disturbance:g})")


@dataclass(frozen=True)
class Bicycle3D(DynamicsModel):
    """Kinematic bicycle with controls (speed, steering angle) and planar drift."""

    code: ClassVar[int] = _kernels.BICYCLE_3D
    name: ClassVar[str] = "bicycle3d"
    state_dim: ClassVar[int] = 3
    periodic_dims: ClassVar[tuple[int, ...]] = (2,)
    wheelbase: float = 0.235
    speed_range: tuple[float, float] = (0.7, 1.4)
    max_steer: float = math.radians(25.0)
    disturbance: float = 0.1

    @property
    def params(self) -> np.ndarray:
        return np.array([self.wheelbase])

    @property
    def control_bounds(self) -> ControlBounds:
        return ControlBounds((self.speed_range[0], -self.max_steer),
                             (self.speed_range[1], self.max_steer))

    @property
    def disturbance_bounds(self) -> ControlBounds:
        return ControlBounds.symmetric(self.disturbance, self.disturbance)

    @property
    def identifier(self) -> str:
        return (f"{self.name}(wheelbase={self.wheelbase:g},speed={self.speed_range[0]:g}-"
                f"{self.speed_range[1]:g},max_steer={self.max_steer:.6g},"
                f"disturbance={self.disturbance:g})")


MODELS = {cls.name: cls for cls in (Integrator1D, DoubleIntegrator, Dubins3D, Bicycle3D)}


def make_model(spec: dict) -> DynamicsModel:
    """Build a model from a config mapping ``{"type": name, **params}``."""
    spec = dict(spec)
    kind = spec.pop("type")
    if kind not in MODELS:
        raise ValueError(f"unknown model type {kind!r}; choose from {sorted(MODELS)}")
    if kind == "bicycle3d":
        if "speed_range" in spec:
            spec["speed_range"] = tuple(spec["speed_range"])
        if "max_steer_deg" in spec:
            spec["max_steer"] = math.radians(spec.pop("max_steer_deg"))
    return MODELS[kind](**spec)
