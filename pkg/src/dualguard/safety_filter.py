"""Least-restrictive filtering against a converged value field."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import DynamicsModel
from .reachability import ValueField, optimal_safe_control, switching_band, value


@dataclass(frozen=True)
class FilterDecision:
    control: np.ndarray
    activated: bool
    value: float


def least_restrictive_filter(vf: ValueField, model: DynamicsModel, x, u_nom,
                             eps_switch: float = 0.0) -> FilterDecision:
    """Pass ``u_nom`` while V(x) > eps_switch, otherwise the optimal safe control.

    ``eps_switch`` widens the switching surface V(x) = 0 into a band so that a
    discrete-time step cannot jump across it.
    """
    if eps_switch < 0:
        raise ValueError("eps_switch must be non-negative")
    u_nom = model.control_bounds.clip(np.asarray(u_nom, dtype=float))
    v = float(value(vf, x))
    if v > eps_switch:
        return FilterDecision(u_nom, False, v)
    return FilterDecision(optimal_safe_control(vf, model, x), True, v)


def default_band(vf: ValueField, model: DynamicsModel, dt: float) -> float:
    return switching_band(vf, model, dt)


def simulate_filtered(vf: ValueField, model: DynamicsModel, failure, starts, dt: float,
                      duration: float, eps_switch: float, nominal: str = "adversarial",
                      constant_control=None, worst_case_disturbance: bool = True,
                      filter_on: bool = True):
    """Closed-loop runs of the filter from many starts.

    ``nominal="adversarial"`` feeds the negated optimal safe control as the
    nominal input; ``"constant"`` feeds ``constant_control``.  Returns the
    minimum of l along each trajectory and the filter activation counts.
    """
    code, params, periodic, ubounds, dbounds = model.kernel_args()
    starts = np.ascontiguousarray(np.atleast_2d(np.asarray(starts, dtype=float)))
    policy = _kernels.POLICY_ADVERSARIAL if nominal == "adversarial" else _kernels.POLICY_CONSTANT
    u_const = np.zeros(model.control_dim) if constant_control is None \
        else np.asarray(constant_control, dtype=float).reshape(model.control_dim)
    steps = int(round(duration / dt))
    return _kernels.filtered_closed_loop(
        code, params, periodic, ubounds, dbounds, starts, policy, u_const,
        worst_case_disturbance, float(dt), steps, *vf.kernel_args(), *failure.kernel_args(),
        float(eps_switch), filter_on)
