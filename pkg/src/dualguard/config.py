"""JSON run configuration and the built-in presets."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .controllers import METHOD_ORDER, VARIANTS, CostSpec, MppiParams
from .dynamics import DynamicsModel, make_model
from .environment import (Environment, HalfSpace, ObstacleSpec, RaceTrack, Task,
                          generate_environment, oval_track)
from .grid import Grid
from .reachability import SolverParams


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration documents."""


_DESK = {
    "scenario": "planar",
    "model": {"type": "dubins3d", "speed": 2.0, "max_turn_rate": 3.0},
    "environment": {"seed": 3, "obstacles": {"count": 15}},
    "grid": {"lower": [0.0, 0.0, -3.141592653589793], "upper": [10.0, 10.0, 3.141592653589793],
             "counts": [101, 101, 60], "periodic": [False, False, True]},
    "solver": {"cfl": 0.5, "tolerance": 1e-3, "max_iterations": 20000},
    "mppi": {"horizon": 50, "dt": 0.02, "temperature": 1.0, "sigma": [1.0], "antithetic": False},
    "cost": {"state_weights": [1.0, 1.0, 0.0], "control_weights": [0.1], "penalty_weight": 1e4,
             "goal_radius": 0.1, "shield_gamma": 0.1},
    # null bands mean L_V * v_max * dt
    "filter": {"rollout_eps": None, "output_eps": None},
    "episodes": {"count": 50, "seed": 0, "horizon": 20.0, "dt": 0.02, "disturbance": "off",
                 "band": 0.2, "min_separation": 5.0},
    "methods": list(METHOD_ORDER),
    "K": [250, 60],
    "reference": "dualguard",
    "relcost_success_only": False,
    "output_dir": "runs/desk",
}

_PAPER = copy.deepcopy(_DESK)
_PAPER.update({"environment": {"seed": 3, "obstacles": {"count": 40}},
               "episodes": dict(_DESK["episodes"], count=100),
               "K": [1000, 250, 60], "output_dir": "runs/paper"})

_RACETRACK = {
    "scenario": "racetrack",
    "model": {"type": "bicycle3d", "wheelbase": 0.235, "speed_range": [0.7, 1.4],
              "max_steer_deg": 25.0, "disturbance": 0.1},
    "environment": {"track": {"straight": 3.0, "radius": 1.2, "half_width": 0.4}},
    "grid": {"lower": [-3.2, -2.0, -3.141592653589793], "upper": [3.2, 2.0, 3.141592653589793],
             "counts": [97, 61, 48], "periodic": [False, False, True]},
    "solver": {"cfl": 0.5, "tolerance": 1e-4, "max_iterations": 20000},
    "mppi": {"horizon": 100, "dt": 0.02, "temperature": 1.0,
             "sigma": [0.2, 0.13962634015954636], "antithetic": False},
    "cost": {"kind": "racetrack", "v_max": 1.4, "centerline_weight": 1.0, "penalty_weight": 1e4,
             "shield_gamma": 0.1},
    "filter": {"rollout_eps": None, "output_eps": None},
    "episodes": {"count": 5, "seed": 0, "horizon": 40.0, "dt": 0.02, "disturbance": "uniform"},
    "methods": list(METHOD_ORDER),
    "K": [1000],
    "reference": "dualguard",
    "relcost_success_only": False,
    "output_dir": "runs/racetrack",
}

PRESETS = {"desk": _DESK, "paper": _PAPER, "racetrack": _RACETRACK}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        base_v = out.get(k)
        # a different model type replaces the preset's parameters wholesale
        if (isinstance(v, dict) and isinstance(base_v, dict)
                and v.get("type", base_v.get("type")) == base_v.get("type")):
            out[k] = _merge(base_v, v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    doc: dict = field(default_factory=lambda: copy.deepcopy(_DESK))
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        self.validate()

    # -- loading ------------------------------------------------------------

    @classmethod
    def preset(cls, name: str, overrides: dict | None = None) -> "RunConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(_merge(PRESETS[name], overrides or {}))

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "RunConfig":
        doc = dict(doc)
        preset = doc.pop("preset", None)
        if preset is None:
            preset = "racetrack" if doc.get("scenario") == "racetrack" else "desk"
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        return cls(_merge(PRESETS[preset], doc), base_dir or Path.cwd())

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc, path.parent)

    def to_json(self) -> str:
        return json.dumps(self.doc, indent=2, sort_keys=True) + "\n"

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        d = self.doc
        if d.get("scenario") not in ("planar", "racetrack"):
            raise ConfigError("scenario must be 'planar' or 'racetrack'")
        try:
            model = self.model()
            grid = self.grid()
            self.solver_params()
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if grid.ndim != model.state_dim:
            raise ConfigError(f"grid has {grid.ndim} dimensions but model {model.name} has "
                              f"{model.state_dim} states")
        for k in model.periodic_dims:
            if not grid.periodic[k]:
                raise ConfigError(f"dimension {k} of {model.name} is periodic in the model but "
                                  f"not in the grid")
        bad = [m for m in d["methods"] if m not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(VARIANTS)}")
        if not d["K"] or any(int(k) < 1 for k in d["K"]):
            raise ConfigError("K values must be positive integers")
        if len(d["mppi"]["sigma"]) != model.control_dim:
            raise ConfigError(f"mppi.sigma needs {model.control_dim} entries")
        env = d["environment"]
        if "path" in env and not self.resolve(env["path"]).exists():
            raise ConfigError(f"environment file {env['path']} does not exist")

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    # -- builders -----------------------------------------------------------

    @property
    def scenario(self) -> str:
        return self.doc["scenario"]

    def model(self) -> DynamicsModel:
        return make_model(self.doc["model"])

    def grid(self) -> Grid:
        return Grid.from_dict(self.doc["grid"])

    def solver_params(self) -> SolverParams:
        return SolverParams(**self.doc["solver"])

    def failure_set(self):
        env = self.doc["environment"]
        if self.scenario == "racetrack":
            if "centerline" in env.get("track", {}):
                return RaceTrack.from_dict(env["track"])
            return oval_track(**env.get("track", {}))
        if "halfspace" in env:
            h = env["halfspace"]
            return HalfSpace(int(h.get("dim", 0)), float(h.get("offset", 0.0)))
        if "path" in env:
            return Environment.load(self.resolve(env["path"]))
        return generate_environment(int(env.get("seed", 0)),
                                    ObstacleSpec.from_dict(env.get("obstacles", {})))

    def mppi_params(self, K: int | None = None) -> MppiParams:
        m = self.doc["mppi"]
        return MppiParams(int(K or self.doc["K"][0]), int(m["horizon"]), float(m["dt"]),
                          float(m["temperature"]), tuple(float(s) for s in m["sigma"]),
                          0, bool(m.get("antithetic", False)))

    def cost_spec(self) -> CostSpec:
        c = self.doc["cost"]
        n = self.model().state_dim
        task = Task((0.0,) * n, float(c.get("goal_radius", 0.1)),
                    float(self.doc["episodes"]["horizon"]),
                    tuple(c.get("state_weights", (1.0, 1.0, 0.0))),
                    tuple(c.get("control_weights", (0.1,))))
        return CostSpec(task, "none", float(c.get("penalty_weight", 1e4)), c.get("kind", "goal"),
                        float(c.get("v_max", 1.4)), float(c.get("centerline_weight", 1.0)),
                        float(c.get("shield_gamma", 0.1)))

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.doc["output_dir"])
