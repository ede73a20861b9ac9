"""MPPI with safety hooks: penalty baselines, Shield-MPPI and DualGuard.

All six controller variants share one rollout engine and differ only in
three hooks: whether rollouts are filtered, which safety penalty enters the
cost, and what happens to the first optimal control before it is applied.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from . import _kernels
from .dynamics import DynamicsModel
from .environment import RaceTrack, Task
from .reachability import ValueField, optimal_safe_control, value
from .safety_filter import least_restrictive_filter

PENALTIES = {
    "none": _kernels.PENALTY_NONE,
    "obstacle": _kernels.PENALTY_OBSTACLE,
    "brt": _kernels.PENALTY_BRT,
    "cbf-condition": _kernels.PENALTY_CBF,
}


@dataclass(frozen=True)
class Variant:
    name: str
    label: str
    safe_rollouts: bool
    penalty: str
    output: str  # "none" | "lrf" | "shield"


VARIANTS = {
    v.name: v for v in (
        Variant("obs_penalty", "Obs. penalty", False, "obstacle", "none"),
        Variant("brt_penalty", "BRT penalty", False, "brt", "none"),
        Variant("obs_penalty_lrf", "Obs. pen. + LRF", False, "obstacle", "lrf"),
        Variant("brt_penalty_lrf", "BRT pen. + LRF", False, "brt", "lrf"),
        Variant("shield", "Shield MPPI", False, "cbf-condition", "shield"),
        Variant("dualguard", "DualGuard", True, "none", "lrf"),
    )
}
METHOD_ORDER = tuple(VARIANTS)
REFERENCE_METHOD = "dualguard"


@dataclass(frozen=True)
class MppiParams:
    samples: int = 250
    horizon: int = 50
    dt: float = 0.02
    temperature: float = 1.0
    sigma: tuple[float, ...] = (1.0,)
    seed: int = 0
    # draw K/2 perturbations and mirror them
    antithetic: bool = False

    def __post_init__(self):
        if self.samples < 1 or self.horizon < 1:
            raise ValueError("sample count and horizon must be at least 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.dt <= 0:
            raise ValueError("rollout dt must be positive")
        if any(s < 0 for s in self.sigma):
            raise ValueError("perturbation standard deviations must be non-negative")


@dataclass(frozen=True)
class CostSpec:
    task: Task
    penalty: str = "none"
    penalty_weight: float = 1e4
    kind: str = "goal"  # "goal" | "racetrack"
    v_max: float = 1.4
    centerline_weight: float = 1.0
    shield_gamma: float = 0.1

    def __post_init__(self):
        if self.penalty not in PENALTIES:
            raise ValueError(f"unknown penalty kind {self.penalty!r}")
        if self.penalty_weight < 0:
            raise ValueError("penalty weight must be non-negative")
        if not 0 <= self.shield_gamma < 1:
            raise ValueError("shield gamma must lie in [0, 1)")

    def with_penalty(self, penalty: str) -> "CostSpec":
        return CostSpec(self.task, penalty, self.penalty_weight, self.kind, self.v_max,
                        self.centerline_weight, self.shield_gamma)


@dataclass
class Rollout:
    states: np.ndarray
    controls: np.ndarray
    perturbations: np.ndarray
    cost: float
    mask: np.ndarray
    min_l: float = float("inf")
    min_v: float = float("inf")
    penalized: bool = False


@dataclass
class RolloutBatch:
    states: np.ndarray        # (K, H+1, n)
    controls: np.ndarray      # (K, H, m)
    perturbations: np.ndarray  # (K, H, m), post-filter deviation from nominal
    costs: np.ndarray         # (K,)
    mask: np.ndarray          # (K, H)
    min_l: np.ndarray
    min_v: np.ndarray
    penalized: np.ndarray

    def __getitem__(self, k: int) -> Rollout:
        return Rollout(self.states[k], self.controls[k], self.perturbations[k],
                       float(self.costs[k]), self.mask[k], float(self.min_l[k]),
                       float(self.min_v[k]), bool(self.penalized[k]))

    def __len__(self) -> int:
        return len(self.costs)


# --------------------------------------------------------------------------
# cost
# --------------------------------------------------------------------------

def _state_term(spec: CostSpec, model: DynamicsModel, failure, x) -> float:
    x = np.asarray(x, dtype=float)
    if spec.kind == "racetrack":
        return spec.centerline_weight * float(failure.centerline_distance(x))
    err = x - np.asarray(spec.task.goal, dtype=float)
    for k in model.periodic_dims:
        err[k] = (err[k] + np.pi) % (2 * np.pi) - np.pi
    return float(np.sum(np.asarray(spec.task.state_weights) * err ** 2))


def _control_term(spec: CostSpec, u) -> float:
    u = np.asarray(u, dtype=float)
    if spec.kind == "racetrack":
        return float((spec.v_max - u[0]) ** 2)
    return float(np.sum(np.asarray(spec.task.control_weights) * u ** 2))


def stage_cost(spec: CostSpec, model: DynamicsModel, failure, vf: ValueField | None, x, u) -> float:
    """Performance terms plus the indicator-type safety penalty at (x, u).

    The CBF-condition penalty needs consecutive states and is only applied
    inside rollouts.
    """
    total = _state_term(spec, model, failure, x) + _control_term(spec, u)
    if spec.penalty == "obstacle" and failure.l(x) <= 0:
        total += spec.penalty_weight
    elif spec.penalty == "brt" and value(vf, x) <= 0:
        total += spec.penalty_weight
    return total


def performance_cost(spec: CostSpec, model: DynamicsModel, failure, x, u) -> float:
    """Stage cost without any safety term; what episodes accumulate."""
    return _state_term(spec, model, failure, x) + _control_term(spec, u)


# --------------------------------------------------------------------------
# update law
# --------------------------------------------------------------------------

def mppi_weights(costs, temperature: float) -> np.ndarray:
    costs = np.asarray(costs, dtype=float)
    if not np.all(np.isfinite(costs)):
        raise ValueError("rollout costs must be finite")
    w = np.exp(-(costs - costs.min()) / temperature)
    return w / w.sum()


def mppi_update(nominal, perturbations, costs, temperature: float, bounds=None):
    """u*_j = u_j + sum_k w_k delta_j^k with softmax weights of -S/lambda.

    Costs are shifted by their minimum before exponentiation.  The result is
    clamped to ``bounds`` (a ControlBounds) when given.
    """
    nominal = np.asarray(nominal, dtype=float)
    perturbations = np.asarray(perturbations, dtype=float)
    w = mppi_weights(costs, temperature)
    out = nominal + np.tensordot(w, perturbations, axes=1)
    if bounds is not None:
        out = bounds.clip(out)
    return out


# --------------------------------------------------------------------------
# rollouts
# --------------------------------------------------------------------------

_EMPTY_CHANNELS = np.zeros((1, 1))


def _vf_args(vf: ValueField | None, ndim: int):
    if vf is None:
        return (_EMPTY_CHANNELS, np.zeros(ndim), np.ones(ndim), np.full(ndim, 2, dtype=np.int64),
                np.zeros(ndim, dtype=np.bool_), np.zeros(ndim, dtype=np.int64))
    return vf.kernel_args()


class RolloutEngine:
    """Reusable buffers around the compiled rollout kernel."""

    def __init__(self, model: DynamicsModel, failure, vf: ValueField | None, spec: CostSpec):
        self.model = model
        self.failure = failure
        self.vf = vf
        self.spec = spec
        self._buffers: dict[tuple[int, int], tuple] = {}
        self._model_args = model.kernel_args()
        self._vf_args = _vf_args(vf, model.state_dim)
        self._env_args = failure.kernel_args()
        task = spec.task
        n, m = model.state_dim, model.control_dim
        goal = np.zeros(n) if task.goal is None else np.asarray(task.goal, dtype=float)
        qdiag = np.zeros(n) if spec.kind == "racetrack" else np.asarray(task.state_weights, dtype=float)
        rw = np.zeros(m) if spec.kind == "racetrack" else np.asarray(task.control_weights, dtype=float)
        half_width = failure.half_width if isinstance(failure, RaceTrack) else 0.0
        self._cost_args = (
            _kernels.COST_RACETRACK if spec.kind == "racetrack" else _kernels.COST_GOAL,
            goal, qdiag, rw, float(spec.v_max), float(spec.centerline_weight))
        self._half_width = half_width

    def _alloc(self, K: int, H: int):
        key = (K, H)
        if key not in self._buffers:
            n, m = self.model.state_dim, self.model.control_dim
            self._buffers[key] = (
                np.empty((K, H + 1, n)), np.empty((K, H, m)), np.empty((K, H, m)),
                np.empty(K), np.zeros((K, H), dtype=np.bool_), np.empty(K), np.empty(K),
                np.zeros(K, dtype=np.bool_))
        return self._buffers[key]

    def run(self, x0, nominal, deltas, dt: float, penalty: str, filter_on: bool,
            eps_switch: float = 0.0) -> RolloutBatch:
        if (filter_on or penalty in ("brt", "cbf-condition")) and self.vf is None:
            raise ValueError("filtered or BRT-aware rollouts need a value field")
        nominal = np.ascontiguousarray(nominal, dtype=float)
        deltas = np.ascontiguousarray(deltas, dtype=float)
        K, H, _ = deltas.shape
        bufs = self._alloc(K, H)
        code, params, periodic, ubounds, dbounds = self._model_args
        env_kind, circles, box, boundary, segments, _ = self._env_args
        cost_kind, goal, qdiag, rw, vmax, kc = self._cost_args
        _kernels.rollout_batch(
            code, params, periodic, ubounds, dbounds, np.asarray(x0, dtype=float), nominal,
            deltas, float(dt), *self._vf_args, env_kind, circles, box, boundary, segments,
            float(self._half_width), cost_kind, goal, qdiag, rw, vmax, kc,
            PENALTIES[penalty], float(self.spec.penalty_weight), float(self.spec.shield_gamma),
            bool(filter_on), float(eps_switch), *bufs)
        return RolloutBatch(*bufs)


def _single(model, failure, vf, spec, x0, nominal, delta, dt, penalty, filter_on, eps):
    engine = RolloutEngine(model, failure, vf, spec)
    delta = np.asarray(delta, dtype=float)[None]
    batch = engine.run(x0, nominal, delta, dt, penalty, filter_on, eps)
    return RolloutBatch(*(np.copy(a) for a in (batch.states, batch.controls, batch.perturbations,
                                                 batch.costs, batch.mask, batch.min_l,
                                                 batch.min_v, batch.penalized)))[0]


def safe_rollout(model, vf, failure, spec: CostSpec, x0, nominal, delta, eps_switch: float,
                 dt: float = 0.02) -> Rollout:
    """Rollout with the LRF applied at every step; no safety term in the cost."""
    return _single(model, failure, vf, spec, x0, nominal, delta, dt, "none", True, eps_switch)


def plain_rollout(model, failure, vf, spec: CostSpec, x0, nominal, delta,
                  dt: float = 0.02) -> Rollout:
    """Unfiltered rollout whose cost carries the spec's penalty kind."""
    return _single(model, failure, vf, spec, x0, nominal, delta, dt, spec.penalty, False, 0.0)


def shield_rollout(model, failure, vf, spec: CostSpec, x0, nominal, delta,
                   dt: float = 0.02) -> Rollout:
    """Unfiltered rollout penalising violations of V(x+) >= (1 - gamma) V(x)."""
    return _single(model, failure, vf, spec, x0, nominal, delta, dt, "cbf-condition", False, 0.0)


def shield_repair(vf: ValueField, model: DynamicsModel, x, u, gamma: float, dt: float,
                  iterations: int = 20) -> np.ndarray:
    """Blend ``u`` toward the safe control until the discrete CBF condition holds.

    Returns ``u`` when V(x+) >= (1 - gamma) V(x) already holds, otherwise the
    blend (1 - beta) u + beta u_safe with the smallest beta found by
    bisection, or u_safe when even beta = 1 fails.
    """
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    x = np.asarray(x, dtype=float)
    u = model.control_bounds.clip(np.asarray(u, dtype=float))
    target = (1.0 - gamma) * float(value(vf, x))

    def ok(candidate) -> bool:
        return float(value(vf, model.step(x, candidate, None, dt))) >= target

    if ok(u):
        return u
    u_safe = optimal_safe_control(vf, model, x)
    if not ok(u_safe):
        return u_safe
    lo, hi = 0.0, 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if ok((1 - mid) * u + mid * u_safe):
            hi = mid
        else:
            lo = mid
    return (1 - hi) * u + hi * u_safe


# --------------------------------------------------------------------------
# receding-horizon controller
# --------------------------------------------------------------------------

@dataclass
class StepDiagnostics:
    cost_min: float
    cost_median: float
    cost_max: float
    activation_fraction: float
    safe_fraction: float
    weight_entropy: float
    rollout_min_l: float
    output_activated: bool
    applied: np.ndarray = field(repr=False)

    def to_json(self) -> str:
        return json.dumps({
            "cost_quantiles": [self.cost_min, self.cost_median, self.cost_max],
            "activation_fraction": self.activation_fraction,
            "safe_fraction": self.safe_fraction,
            "weight_entropy": self.weight_entropy,
            "rollout_min_l": self.rollout_min_l,
            "output_activated": self.output_activated,
            "applied": [float(a) for a in self.applied],
        })


class Controller:
    """One MPPI variant with its own nominal sequence and RNG.

    ``rollout_eps`` and ``output_eps`` are the switching bands of the rollout
    filter and the output filter.  ``output_filter=False`` removes the output
    stage of any variant (used to expose multimodal averaging).
    """

    def __init__(self, variant: str, model: DynamicsModel, failure, vf: ValueField | None,
                 spec: CostSpec, params: MppiParams, rollout_eps: float = 0.0,
                 output_eps: float | None = None, output_filter: bool = True,
                 sim_dt: float | None = None, diagnostics: IO[str] | None = None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown controller variant {variant!r}")
        self.variant = VARIANTS[variant]
        if len(params.sigma) != model.control_dim:
            raise ValueError(f"sigma has {len(params.sigma)} entries, model has "
                             f"{model.control_dim} control channels")
        self.model = model
        self.failure = failure
        self.vf = vf
        self.spec = spec.with_penalty(self.variant.penalty)
        self.params = params
        self.rollout_eps = float(rollout_eps)
        self.output_eps = self.rollout_eps if output_eps is None else float(output_eps)
        self.output_filter = output_filter
        self.sim_dt = params.dt if sim_dt is None else sim_dt
        self.rng = np.random.default_rng(params.seed)
        self.engine = RolloutEngine(model, failure, vf, self.spec)
        self.nominal = np.tile(model.control_bounds.midpoint, (params.horizon, 1))
        self.sigma = np.asarray(params.sigma, dtype=float)
        self.diagnostics_stream = diagnostics
        self.last_rollouts: RolloutBatch | None = None
        self.last_optimal: np.ndarray | None = None

    def reset(self, seed: int | None = None) -> None:
        self.rng = np.random.default_rng(self.params.seed if seed is None else seed)
        self.nominal = np.tile(self.model.control_bounds.midpoint, (self.params.horizon, 1))

    def sample_perturbations(self) -> np.ndarray:
        K, H = self.params.samples, self.params.horizon
        m = self.model.control_dim
        if self.params.antithetic:
            half = self.rng.standard_normal(((K + 1) // 2, H, m)) * self.sigma
            return np.concatenate([half, -half])[:K]
        return self.rng.standard_normal((K, H, m)) * self.sigma

    def step(self, x) -> tuple[np.ndarray, StepDiagnostics]:
        x = np.asarray(x, dtype=float)
        v = self.variant
        deltas = self.sample_perturbations()
        batch = self.engine.run(x, self.nominal, deltas, self.params.dt, self.spec.penalty,
                                v.safe_rollouts, self.rollout_eps)
        weights = mppi_weights(batch.costs, self.params.temperature)
        optimal = self.model.control_bounds.clip(
            self.nominal + np.tensordot(weights, batch.perturbations, axes=1))
        u0 = optimal[0]
        activated = False
        if self.output_filter and v.output == "lrf":
            decision = least_restrictive_filter(self.vf, self.model, x, u0, self.output_eps)
            u0, activated = decision.control, decision.activated
        elif self.output_filter and v.output == "shield":
            repaired = shield_repair(self.vf, self.model, x, u0, self.spec.shield_gamma, self.sim_dt)
            activated = not np.array_equal(repaired, u0)
            u0 = repaired
        self.last_rollouts = batch
        self.last_optimal = optimal
        self.nominal = np.concatenate([optimal[1:], optimal[-1:]], axis=0)
        nz = weights[weights > 0]
        diag = StepDiagnostics(
            float(batch.costs.min()), float(np.median(batch.costs)), float(batch.costs.max()),
            float(batch.mask.mean()),
            float(np.mean(~batch.penalized & (batch.min_l > 0))),
            float(-np.sum(nz * np.log(nz))),
            float(batch.min_l.min()), activated, np.array(u0))
        if self.diagnostics_stream is not None:
            self.diagnostics_stream.write(diag.to_json() + "\n")
        return np.array(u0), diag
