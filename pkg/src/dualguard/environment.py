"""Failure sets, signed distances l(x), tasks and procedural scenarios."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _kernels


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObstacleSpec:
    count: int = 40
    diameter_range: tuple[float, float] = (0.35, 3.5)
    domain: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 0.0), (10.0, 10.0))
    # free space is checked for connectivity after eroding it by this margin
    corridor_clearance: float = 0.25
    resolution: float = 0.1
    max_fill_fraction: float = 2.0
    max_attempts: int = 200

    def to_dict(self) -> dict:
        return {"count": self.count, "diameter_range": list(self.diameter_range),
                "domain": [list(self.domain[0]), list(self.domain[1])],
                "corridor_clearance": self.corridor_clearance,
                "resolution": self.resolution, "max_fill_fraction": self.max_fill_fraction,
                "max_attempts": self.max_attempts}

    @classmethod
    def from_dict(cls, d: dict) -> "ObstacleSpec":
        d = dict(d)
        if "diameter_range" in d:
            d["diameter_range"] = tuple(d["diameter_range"])
        if "domain" in d:
            d["domain"] = (tuple(d["domain"][0]), tuple(d["domain"][1]))
        return cls(**d)


class _FailureSet:
    """Shared l(x) plumbing; subclasses provide ``kernel_args``."""

    def kernel_args(self):
        raise NotImplementedError

    def l(self, x):
        """Signed distance to the failure set in the position plane.

        Positive outside, non-positive inside; heading is ignored.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
        out = _kernels.failure_batch(*self.kernel_args(), xs)
        return float(out[0]) if single else out


@dataclass(frozen=True)
class Environment(_FailureSet):
    """Axis-aligned box domain cluttered with circles."""

    lower: tuple[float, float]
    upper: tuple[float, float]
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)), repr=False)
    boundary_is_failure: bool = True
    seed: int | None = None
    spec: ObstacleSpec | None = None

    def __post_init__(self):
        obstacles = np.ascontiguousarray(np.asarray(self.obstacles, dtype=float).reshape(-1, 3))
        obstacles.setflags(write=False)
        object.__setattr__(self, "obstacles", obstacles)
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if not all(lo < hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("domain lower corner must be below upper corner")
        if np.any(obstacles[:, 2] <= 0):
            raise ValueError("obstacle radii must be positive")
        lo, hi = np.array(self.lower), np.array(self.upper)
        if np.any(obstacles[:, :2] < lo) or np.any(obstacles[:, :2] > hi):
            raise ValueError("obstacle centres must lie inside the domain")

    def kernel_args(self):
        box = np.array([*self.lower, *self.upper])
        return (_kernels.ENV_CIRCLES, self.obstacles, box, self.boundary_is_failure,
                np.zeros((0, 4)), 0.0)

    def inside_failure(self, x) -> np.ndarray:
        """Direct containment test, independent of the distance code."""
        pos = np.atleast_2d(np.asarray(x, dtype=float))[:, :2]
        hit = np.zeros(len(pos), dtype=bool)
        for cx, cy, r in self.obstacles:
            hit |= np.hypot(pos[:, 0] - cx, pos[:, 1] - cy) <= r
        if self.boundary_is_failure:
            lo, hi = np.array(self.lower), np.array(self.upper)
            hit |= np.any(pos <= lo, axis=1) | np.any(pos >= hi, axis=1)
        return hit

    def to_dict(self) -> dict:
        doc = {
            "domain": [list(self.lower), list(self.upper)],
            "boundary_is_failure": self.boundary_is_failure,
            "obstacles": [{"c": [float(cx), float(cy)], "r": float(r)}
                          for cx, cy, r in self.obstacles],
            "seed": self.seed,
        }
        if self.spec is not None:
            doc["spec"] = self.spec.to_dict()
        return doc

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        obstacles = np.array([[*o["c"], o["r"]] for o in d.get("obstacles", [])],
                             dtype=float).reshape(-1, 3)
        spec = ObstacleSpec.from_dict(d["spec"]) if d.get("spec") else None
        return cls(tuple(d["domain"][0]), tuple(d["domain"][1]), obstacles,
                   bool(d.get("boundary_is_failure", True)), d.get("seed"), spec)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Environment":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _free_space_connected(env: Environment, clearance: float, resolution: float) -> bool:
    xs = np.arange(env.lower[0] + resolution / 2, env.upper[0], resolution)
    ys = np.arange(env.lower[1] + resolution / 2, env.upper[1], resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    free = (env.l(pts) > clearance).reshape(gx.shape)
    if not free.any():
        return False
    _, n_components = ndimage.label(free)
    return n_components == 1


def generate_environment(seed: int, spec: ObstacleSpec | None = None) -> Environment:
    """Sample a cluttered box environment, deterministic in ``seed``.

    Obstacles are placed one at a time with uniform centres and diameters; a
    placement that disconnects the free space (eroded by the corridor
    clearance) is re-drawn.
    """
    spec = spec or ObstacleSpec()
    lo = np.array(spec.domain[0], dtype=float)
    hi = np.array(spec.domain[1], dtype=float)
    dmin, dmax = spec.diameter_range
    if not 0 < dmin <= dmax:
        raise ValueError("diameter range must satisfy 0 < min <= max")
    mean_area = math.pi / 4 * (dmax ** 3 - dmin ** 3) / (3 * (dmax - dmin)) if dmax > dmin \
        else math.pi / 4 * dmin ** 2
    if spec.count * mean_area > spec.max_fill_fraction * float(np.prod(hi - lo)):
        raise ValueError("expected obstacle area exceeds the allowed fill fraction")
    rng = np.random.default_rng(seed)
    placed: list[list[float]] = []
    for _ in range(spec.count):
        for _attempt in range(spec.max_attempts):
            centre = rng.uniform(lo, hi)
            radius = rng.uniform(dmin, dmax) / 2.0
            trial = Environment(tuple(lo), tuple(hi), np.array(placed + [[*centre, radius]]))
            if _free_space_connected(trial, spec.corridor_clearance, spec.resolution):
                placed.append([float(centre[0]), float(centre[1]), float(radius)])
                break
        else:
            raise GenerationError(
                f"could not place obstacle {len(placed) + 1} after {spec.max_attempts} attempts")
    return Environment(tuple(lo), tuple(hi), np.array(placed).reshape(-1, 3), True, seed, spec)


@dataclass(frozen=True)
class Task:
    goal: tuple[float, ...]
    goal_radius: float = 0.1
    horizon: float = 20.0
    state_weights: tuple[float, ...] = (1.0, 1.0, 0.0)
    control_weights: tuple[float, ...] = (0.1,)

    def __post_init__(self):
        if self.goal_radius <= 0:
            raise ValueError("goal radius must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if any(q < 0 for q in self.state_weights):
            raise ValueError("state weights must be non-negative")

    def reached(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(math.hypot(x[0] - self.goal[0], x[1] - self.goal[1]) <= self.goal_radius)


@dataclass(frozen=True)
class RaceTrack(_FailureSet):
    """Closed centreline polyline with a constant half-width band."""

    centerline: np.ndarray = field(repr=False)
    half_width: float = 0.4

    def __post_init__(self):
        pts = np.asarray(self.centerline, dtype=float).reshape(-1, 2)
        if len(pts) > 1 and np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]
        if len(pts) < 3:
            raise ValueError("a closed centreline needs at least three vertices")
        if self.half_width <= 0:
            raise ValueError("half-width must be positive")
        if _self_intersecting(pts):
            raise ValueError("centreline polyline is self-intersecting")
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "centerline", pts)

    @property
    def segments(self) -> np.ndarray:
        nxt = np.roll(self.centerline, -1, axis=0)
        return np.ascontiguousarray(np.hstack([self.centerline, nxt]))

    @property
    def length(self) -> float:
        seg = self.segments
        return float(np.hypot(seg[:, 2] - seg[:, 0], seg[:, 3] - seg[:, 1]).sum())

    def kernel_args(self):
        return (_kernels.ENV_TRACK, np.zeros((0, 3)), np.zeros(4), False,
                self.segments, float(self.half_width))

    def centerline_distance(self, x):
        """Distance to the centreline, i.e. l_center - l(x)."""
        return self.half_width - self.l(x)

    def progress(self, x) -> float:
        """Arc length of the closest centreline point, measured from vertex 0."""
        p = np.asarray(x, dtype=float)[:2]
        seg = self.segments
        a, b = seg[:, :2], seg[:, 2:]
        e = b - a
        ll = np.einsum("ij,ij->i", e, e)
        t = np.clip(np.einsum("ij,ij->i", p - a, e) / ll, 0.0, 1.0)
        dist = np.hypot(*(a + t[:, None] * e - p).T)
        i = int(np.argmin(dist))
        cum = np.concatenate([[0.0], np.cumsum(np.sqrt(ll))])
        return float(cum[i] + t[i] * np.sqrt(ll[i]))

    def to_dict(self) -> dict:
        return {"centerline": self.centerline.tolist(), "half_width": self.half_width}

    @classmethod
    def from_dict(cls, d: dict) -> "RaceTrack":
        return cls(np.array(d["centerline"], dtype=float), float(d["half_width"]))


def _self_intersecting(pts: np.ndarray) -> bool:
    n = len(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            c, d = pts[j], pts[(j + 1) % n]
            d1, d2 = cross(c, d, a), cross(c, d, b)
            d3, d4 = cross(a, b, c), cross(a, b, d)
            if d1 * d2 < 0 and d3 * d4 < 0:
                return True
    return False


def racetrack_environment(centerline, half_width: float) -> RaceTrack:
    return RaceTrack(np.asarray(centerline, dtype=float), half_width)


def oval_track(straight: float = 3.0, radius: float = 1.2, half_width: float = 0.4,
               points_per_turn: int = 24) -> RaceTrack:
    """Stadium-shaped loop centred at the origin, driven counter-clockwise."""
    pts = []
    for cx, start in ((straight / 2, -math.pi / 2), (-straight / 2, math.pi / 2)):
        for k in range(points_per_turn + 1):
            a = start + math.pi * k / points_per_turn
            pts.append((cx + radius * math.cos(a), radius * math.sin(a)))
    return RaceTrack(np.array(pts), half_width)


@dataclass(frozen=True)
class HalfSpace:
    """Failure set {x : x[dim] <= offset}; l(x) = x[dim] - offset.

    Used for the analytic 1-D and 2-D checks, not for navigation.
    """

    dim: int = 0
    offset: float = 0.0

    def l(self, x):
        x = np.asarray(x, dtype=float)
        out = x[..., self.dim] - self.offset
        return float(out) if x.ndim == 1 else out

    def to_dict(self) -> dict:
        return {"halfspace": {"dim": self.dim, "offset": self.offset}}


def load_failure_set(d: dict):
    if "halfspace" in d:
        h = d["halfspace"]
        return HalfSpace(int(h.get("dim", 0)), float(h.get("offset", 0.0)))
    if "centerline" in d:
        return RaceTrack.from_dict(d)
    return Environment.from_dict(d)
