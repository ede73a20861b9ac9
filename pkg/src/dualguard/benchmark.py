"""Episode generation, closed-loop execution and the comparison metrics."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .controllers import (METHOD_ORDER, REFERENCE_METHOD, VARIANTS, Controller, CostSpec,
                          MppiParams, performance_cost)
from .dynamics import DynamicsModel
from .environment import RaceTrack, Task
from .reachability import ValueField, value

OUTCOMES = ("Success", "Timeout", "Failure")
CSV_COLUMNS = ("method", "K", "episode_id", "outcome", "steps", "cost", "mean_step_ms",
               "min_l", "min_V")
THREADS_ENV = "DUALGUARD_THREADS"


class EpisodeGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EpisodeSpec:
    episode_id: int
    x0: tuple[float, ...]
    goal: tuple[float, ...] | None
    horizon: float = 20.0
    dt: float = 0.02
    disturbance: str = "off"  # "off" | "uniform"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeSpec":
        d = dict(d)
        d["x0"] = tuple(d["x0"])
        d["goal"] = None if d.get("goal") is None else tuple(d["goal"])
        return cls(**d)


@dataclass
class EpisodeResult:
    method: str
    K: int
    episode_id: int
    outcome: str
    steps: int
    cost: float
    mean_step_ms: float | None
    min_l: float
    min_V: float
    trajectory: np.ndarray | None = field(default=None, repr=False)

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.method, self.K, self.episode_id)

    def csv_row(self) -> list[str]:
        ms = "" if self.mean_step_ms is None else repr(float(self.mean_step_ms))
        return [self.method, str(self.K), str(self.episode_id), self.outcome, str(self.steps),
                repr(float(self.cost)), ms, repr(float(self.min_l)), repr(float(self.min_V))]

    @classmethod
    def from_row(cls, row: dict) -> "EpisodeResult":
        ms = row.get("mean_step_ms", "")
        return cls(row["method"], int(row["K"]), int(row["episode_id"]), row["outcome"],
                   int(row["steps"]), float(row["cost"]), float(ms) if ms else None,
                   float(row["min_l"]), float(row["min_V"]))


@dataclass
class Scenario:
    """Everything an episode needs besides its spec and the method."""

    model: DynamicsModel
    failure: object
    vf: ValueField
    cost: CostSpec
    rollout_eps: float
    output_eps: float | None = None
    kind: str = "planar"  # "planar" | "racetrack"


# --------------------------------------------------------------------------
# episodes
# --------------------------------------------------------------------------

def _annulus_sample(rng, lower, upper, band: float):
    lo, hi = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    inner_lo, inner_hi = lo + band * (hi - lo), hi - band * (hi - lo)
    while True:
        p = rng.uniform(lo, hi)
        if not np.all((p > inner_lo) & (p < inner_hi)):
            return p


def generate_episodes(env, vf: ValueField, n: int, seed: int, eps: float = 0.0,
                      band: float = 0.2, min_separation: float = 5.0, horizon: float = 20.0,
                      dt: float = 0.02, disturbance: str = "off",
                      max_attempts: int = 100_000) -> list[EpisodeSpec]:
    """Start/goal pairs near the domain boundary, outside the BRT, far apart.

    Positions are uniform over the outer ``band`` fraction of the domain on
    each side, headings uniform.  Both states must have V > eps.
    """
    if n < 0:
        raise ValueError("episode count must be non-negative")
    rng = np.random.default_rng(seed)
    specs: list[EpisodeSpec] = []

    def draw():
        p = _annulus_sample(rng, env.lower, env.upper, band)
        th = rng.uniform(-math.pi, math.pi)
        return np.array([p[0], p[1], th])

    attempts = 0
    while len(specs) < n:
        attempts += 1
        if attempts > max_attempts:
            raise EpisodeGenerationError(
                f"only {len(specs)} of {n} episodes found after {max_attempts} attempts")
        x0, xg = draw(), draw()
        if math.hypot(*(x0[:2] - xg[:2])) < min_separation:
            continue
        if value(vf, x0) <= eps or value(vf, xg) <= eps:
            continue
        specs.append(EpisodeSpec(len(specs), tuple(float(v) for v in x0),
                                 tuple(float(v) for v in xg), horizon, dt, disturbance,
                                 int(rng.integers(2 ** 31))))
    return specs


def racetrack_episodes(track: RaceTrack, n: int, seed: int, horizon: float = 60.0,
                       dt: float = 0.02, disturbance: str = "uniform") -> list[EpisodeSpec]:
    """Start on the centreline at vertex 0, heading along the first segment."""
    seg = track.segments[0]
    heading = math.atan2(seg[3] - seg[1], seg[2] - seg[0])
    rng = np.random.default_rng(seed)
    return [EpisodeSpec(i, (float(seg[0]), float(seg[1]), heading), None, horizon, dt,
                        disturbance, int(rng.integers(2 ** 31))) for i in range(n)]


def run_episode(method: str, K: int, spec: EpisodeSpec, scenario: Scenario,
                params: MppiParams, record_timing: bool = False,
                controller_factory: Callable[..., Controller] | None = None,
                keep_trajectory: bool = True) -> EpisodeResult:
    """Closed loop of one controller on one episode.

    The accumulated cost holds only the task's performance terms.  The
    controller RNG is seeded from the episode so every method sees the same
    random stream.
    """
    model, failure, vf = scenario.model, scenario.failure, scenario.vf
    base = scenario.cost
    if scenario.kind == "racetrack":
        cost = base
    else:
        task = Task(spec.goal, base.task.goal_radius, spec.horizon, base.task.state_weights,
                    base.task.control_weights)
        cost = CostSpec(task, base.penalty, base.penalty_weight, base.kind, base.v_max,
                        base.centerline_weight, base.shield_gamma)
    p = MppiParams(K, params.horizon, params.dt, params.temperature, params.sigma, spec.seed,
                   params.antithetic)
    factory = controller_factory or Controller
    ctrl = factory(method, model, failure, vf, cost, p, rollout_eps=scenario.rollout_eps,
                   output_eps=scenario.output_eps, sim_dt=spec.dt)
    drng = np.random.default_rng(spec.seed + 1)
    dbounds = model.disturbance_bounds

    x = np.array(spec.x0, dtype=float)
    traj = [x.copy()]
    min_l = float(failure.l(x))
    min_v = float(value(vf, x))
    total = 0.0
    elapsed = 0.0
    steps = 0
    n_steps = int(round(spec.horizon / spec.dt))
    lap = 0.0
    last_progress = failure.progress(x) if scenario.kind == "racetrack" else 0.0

    if min_l <= 0:
        outcome = "Failure"
    elif scenario.kind != "racetrack" and cost.task.reached(x):
        outcome = "Success"
    else:
        outcome = "Timeout"
        for steps in range(1, n_steps + 1):
            t0 = time.perf_counter()
            u, _ = ctrl.step(x)
            elapsed += time.perf_counter() - t0
            total += performance_cost(cost, model, failure, x, u)
            d = None
            if spec.disturbance == "uniform" and dbounds.dim:
                d = drng.uniform(dbounds.lower, dbounds.upper)
            x = model.step(x, u, d, spec.dt)
            traj.append(x.copy())
            lx = float(failure.l(x))
            min_l = min(min_l, lx)
            min_v = min(min_v, float(value(vf, x)))
            if lx <= 0:
                outcome = "Failure"
                break
            if scenario.kind == "racetrack":
                prog = failure.progress(x)
                step_prog = prog - last_progress
                half = failure.length / 2
                if step_prog < -half:
                    step_prog += failure.length
                elif step_prog > half:
                    step_prog -= failure.length
                lap += step_prog
                last_progress = prog
                if lap >= failure.length:
                    outcome = "Success"
                    break
            elif cost.task.reached(x):
                outcome = "Success"
                break
    ms = (1000.0 * elapsed / steps) if (record_timing and steps) else None
    return EpisodeResult(method, K, spec.episode_id, outcome, steps, total, ms, min_l, min_v,
                         np.array(traj) if keep_trajectory else None)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

@dataclass
class MethodMetrics:
    method: str
    episodes: int
    success: float
    timeout: float
    failure: float
    relcost: float | None
    relcost_se: float | None
    p_value: float | None
    common: int
    relcost_success: float | None = None
    common_success: int = 0

    @property
    def significant(self) -> bool:
        return self.p_value is not None and self.p_value < 0.05


@dataclass
class MetricsTable:
    K: int | None
    reference: str
    rows: list[MethodMetrics]
    relcost_success_only: bool = False

    def row(self, method: str) -> MethodMetrics:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_dict(self) -> dict:
        return {"K": self.K, "reference": self.reference,
                "relcost_success_only": self.relcost_success_only,
                "rows": [asdict(r) for r in self.rows]}

    def to_text(self, verbose: bool = False) -> str:
        head = ["Method", "Success%", "Timeout%", "Failure%", "RelCost", "p", "n_common"]
        if verbose:
            head += ["RelCost(succ)", "n_succ"]
        lines = [head]
        for r in self.rows:
            label = VARIANTS[r.method].label if r.method in VARIANTS else r.method
            rel = "-" if r.relcost is None else (
                f"{r.relcost:.2f}" + ("" if r.relcost_se is None else f" ± {r.relcost_se:.2f}")
                + ("*" if r.significant else ""))
            pv = "-" if r.p_value is None else f"{r.p_value:.3g}"
            cells = [label, f"{r.success:.1f}", f"{r.timeout:.1f}", f"{r.failure:.1f}", rel, pv,
                     str(r.common)]
            if verbose:
                cells += ["-" if r.relcost_success is None else f"{r.relcost_success:.2f}",
                          str(r.common_success)]
            lines.append(cells)
        widths = [max(len(row[i]) for row in lines) for i in range(len(head))]
        title = f"K = {self.K}" if self.K is not None else "all K"
        body = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in lines]
        return "\n".join([title, *body])


def paired_t_pvalue(diffs) -> float:
    """Two-sided paired t-test p-value; 1.0 when the statistic is undefined or zero."""
    d = np.asarray(diffs, dtype=float)
    n = len(d)
    if n < 2:
        return 1.0
    sd = d.std(ddof=1)
    mean = d.mean()
    if sd == 0 or mean == 0:
        return 1.0
    t = mean / (sd / math.sqrt(n))
    return float(2 * stats.t.sf(abs(t), n - 1))


def _relcost(costs_m, costs_ref):
    if not costs_m:
        return None, None, None
    cm, cr = np.asarray(costs_m), np.asarray(costs_ref)
    ref_mean = cr.mean()
    if ref_mean == 0:
        return None, None, None
    se = float(cm.std(ddof=1) / math.sqrt(len(cm)) / ref_mean) if len(cm) > 1 else None
    return float(cm.mean() / ref_mean), se, paired_t_pvalue(cm - cr)


def compute_metrics(results: dict[str, Sequence[EpisodeResult]], reference: str = REFERENCE_METHOD,
                    relcost_success_only: bool = False, K: int | None = None) -> MetricsTable:
    """Outcome percentages and RelCost against ``reference`` over common safe episodes.

    The common set holds episodes where neither method failed (or, with
    ``relcost_success_only``, where both succeeded).  Both variants are
    computed; the flag picks which one fills ``relcost``.
    """
    if reference not in results:
        raise KeyError(f"reference method {reference!r} has no results")
    ref = {r.episode_id: r for r in results[reference]}
    rows = []
    ordered = sorted(results, key=lambda m: (METHOD_ORDER.index(m) if m in METHOD_ORDER
                                            else len(METHOD_ORDER), m))
    for method in ordered:
        res = sorted(results[method], key=lambda r: r.episode_id)
        n = len(res)
        counts = {o: sum(r.outcome == o for r in res) for o in OUTCOMES}
        pct = {o: (100.0 * counts[o] / n if n else 0.0) for o in OUTCOMES}
        safe = [(r.cost, ref[r.episode_id].cost) for r in res
                if r.episode_id in ref and r.outcome != "Failure"
                and ref[r.episode_id].outcome != "Failure"]
        succ = [(r.cost, ref[r.episode_id].cost) for r in res
                if r.episode_id in ref and r.outcome == "Success"
                and ref[r.episode_id].outcome == "Success"]
        rel_safe = _relcost([a for a, _ in safe], [b for _, b in safe])
        rel_succ = _relcost([a for a, _ in succ], [b for _, b in succ])
        primary, common = (rel_succ, len(succ)) if relcost_success_only else (rel_safe, len(safe))
        rows.append(MethodMetrics(method, n, pct["Success"], pct["Timeout"], pct["Failure"],
                                  primary[0], primary[1], primary[2], common,
                                  rel_succ[0], len(succ)))
    return MetricsTable(K, reference, rows, relcost_success_only)


def tables_by_k(results: Iterable[EpisodeResult], reference: str = REFERENCE_METHOD,
                relcost_success_only: bool = False) -> list[MetricsTable]:
    grouped: dict[int, dict[str, list[EpisodeResult]]] = {}
    for r in results:
        grouped.setdefault(r.K, {}).setdefault(r.method, []).append(r)
    tables = []
    for K in sorted(grouped, reverse=True):
        by_method = grouped[K]
        ref = reference if reference in by_method else sorted(by_method)[0]
        tables.append(compute_metrics(by_method, ref, relcost_success_only, K))
    return tables


# --------------------------------------------------------------------------
# suites and files
# --------------------------------------------------------------------------

def _sort_key(r: EpisodeResult):
    m = METHOD_ORDER.index(r.method) if r.method in METHOD_ORDER else len(METHOD_ORDER)
    return (m, r.method, -r.K, r.episode_id)


def results_to_csv(results: Iterable[EpisodeResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(results, key=_sort_key):
        w.writerow(r.csv_row())
    return buf.getvalue()


def write_csv(path, results: Iterable[EpisodeResult]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(results_to_csv(results))
    os.replace(tmp, path)


def read_csv(path) -> list[EpisodeResult]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing CSV columns {sorted(missing)}")
        return [EpisodeResult.from_row(row) for row in reader]


def save_episodes(path, specs: Sequence[EpisodeSpec]) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in specs], indent=1) + "\n")


def load_episodes(path) -> list[EpisodeSpec]:
    return [EpisodeSpec.from_dict(d) for d in json.loads(Path(path).read_text())]


def thread_count(default: int | None = None) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer")
        return n
    return default or os.cpu_count() or 1


def run_suite(scenario: Scenario, episodes: Sequence[EpisodeSpec], methods: Sequence[str],
              Ks: Sequence[int], params: dict[str, MppiParams] | MppiParams,
              csv_path=None, trajectory_dir=None, threads: int | None = None,
              record_timing: bool = False,
              progress: Callable[[EpisodeResult], None] | None = None,
              controller_factory: Callable[..., Controller] | None = None) -> list[EpisodeResult]:
    """Run the method x K x episode cross product.

    When ``csv_path`` exists its rows are kept and their keys skipped, so an
    interrupted run resumes.  The CSV is rewritten in sorted order after
    every finished episode.
    """
    for m in methods:
        if m not in VARIANTS:
            raise ValueError(f"unknown method {m!r}")
    done: dict[tuple, EpisodeResult] = {}
    if csv_path is not None and Path(csv_path).exists():
        for r in read_csv(csv_path):
            done[r.key] = r
    jobs = [(m, K, s) for m in methods for K in Ks for s in episodes
            if (m, K, s.episode_id) not in done]

    def work(job):
        m, K, spec = job
        p = params[m] if isinstance(params, dict) else params
        return run_episode(m, K, spec, scenario, p, record_timing, controller_factory,
                           keep_trajectory=trajectory_dir is not None)

    if trajectory_dir is not None:
        Path(trajectory_dir).mkdir(parents=True, exist_ok=True)
    n_threads = threads or thread_count()
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        for res in pool.map(work, jobs):
            if trajectory_dir is not None and res.trajectory is not None:
                write_trajectory(Path(trajectory_dir) / f"{res.method}_K{res.K}_ep{res.episode_id:03d}.json",
                                 res)
            done[res.key] = res
            if csv_path is not None:
                write_csv(csv_path, done.values())
            if progress is not None:
                progress(res)
    return sorted(done.values(), key=_sort_key)


def write_trajectory(path, res: EpisodeResult) -> None:
    doc = {"method": res.method, "K": res.K, "episode_id": res.episode_id,
           "outcome": res.outcome, "states": np.round(res.trajectory, 9).tolist()}
    Path(path).write_text(json.dumps(doc) + "\n")


def load_trajectories(paths) -> list[dict]:
    out = []
    for p in paths:
        doc = json.loads(Path(p).read_text())
        docs = doc if isinstance(doc, list) else [doc]
        for d in docs:
            if "states" not in d:
                raise ValueError(f"{p}: trajectory document without 'states'")
            out.append(d)
    return out
