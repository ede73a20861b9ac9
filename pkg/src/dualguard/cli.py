"""Command-line entry point: ``dualguard <subcommand>``.

Exit codes: 0 success, 2 validation error, 3 solver non-convergence,
4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import benchmark, plotting, reachability
from .config import PRESETS, ConfigError, RunConfig
from .environment import Environment, GenerationError, load_failure_set

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("dualguard")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file {path} not found", EXIT_IO)
        return RunConfig.load(path)
    return RunConfig.preset(getattr(args, "preset", None) or "desk")


def _failure(cfg: RunConfig, env_path: str | None):
    if env_path:
        p = Path(env_path)
        if not p.exists():
            raise CliError(f"environment file {p} not found; create it with `dualguard env`",
                           EXIT_IO)
        return load_failure_set(json.loads(p.read_text()))
    return cfg.failure_set()


def _value_field(cfg: RunConfig, path: str):
    p = Path(path)
    if not p.exists():
        raise CliError(f"value field {p} not found; run `dualguard solve --out {p}` first",
                       EXIT_IO)
    return reachability.load(p, expected_model=cfg.model().identifier)


def _bands(cfg: RunConfig, vf) -> tuple[float, float]:
    f = cfg.doc["filter"]
    dt = float(cfg.doc["episodes"]["dt"])
    band = None
    if f.get("rollout_eps") is None or f.get("output_eps") is None:
        band = reachability.switching_band(vf, cfg.model(), dt)
    r = band if f.get("rollout_eps") is None else float(f["rollout_eps"])
    o = band if f.get("output_eps") is None else float(f["output_eps"])
    return r, o


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_config(args) -> int:
    cfg = RunConfig.preset(args.preset)
    text = cfg.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_env(args) -> int:
    cfg = _config(args)
    if cfg.scenario == "racetrack":
        track = cfg.failure_set()
        Path(args.out).write_text(json.dumps(track.to_dict(), indent=2) + "\n")
        print(f"track: {len(track.centerline)} vertices, length {track.length:.3f} m")
        return EXIT_OK
    if args.seed is not None:
        cfg.doc["environment"]["seed"] = args.seed
    env = cfg.failure_set()
    if not isinstance(env, Environment):
        Path(args.out).write_text(json.dumps(env.to_dict(), indent=2) + "\n")
        print(f"failure set: {type(env).__name__}")
        return EXIT_OK
    env.save(args.out)
    print(f"environment: {len(env.obstacles)} obstacles, seed {env.seed}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _config(args)
    model = cfg.model()
    failure = _failure(cfg, args.env)
    grid = cfg.grid()
    params = cfg.solver_params()
    vf = reachability.solve(model, failure, grid, params)
    reachability.save(vf, args.out)
    print(f"iterations: {vf.iterations}")
    print(f"residual: {vf.residual:.6e}")
    print(f"brt_volume_fraction: {vf.brt_fraction():.6f}")
    print(f"switching_band: {reachability.switching_band(vf, model, cfg.doc['episodes']['dt']):.6f}")
    return EXIT_OK


def cmd_episodes(args) -> int:
    cfg = _config(args)
    vf = _value_field(cfg, args.vf)
    failure = _failure(cfg, args.env)
    e = cfg.doc["episodes"]
    if cfg.scenario == "racetrack":
        specs = benchmark.racetrack_episodes(failure, int(e["count"]), int(e["seed"]),
                                             float(e["horizon"]), float(e["dt"]),
                                             e.get("disturbance", "uniform"))
    else:
        eps, _ = _bands(cfg, vf)
        specs = benchmark.generate_episodes(
            failure, vf, int(e["count"]), int(e["seed"]), eps, float(e.get("band", 0.2)),
            float(e.get("min_separation", 5.0)), float(e["horizon"]), float(e["dt"]),
            e.get("disturbance", "off"))
    benchmark.save_episodes(args.out, specs)
    print(f"episodes: {len(specs)}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    vf = _value_field(cfg, args.vf)
    failure = _failure(cfg, args.env)
    ep_path = Path(args.episodes)
    if not ep_path.exists():
        raise CliError(f"episode file {ep_path} not found; create it with `dualguard episodes`",
                       EXIT_IO)
    specs = benchmark.load_episodes(ep_path)
    if args.limit is not None:
        specs = specs[:args.limit]
    methods = args.methods or cfg.doc["methods"]
    Ks = args.K or [int(k) for k in cfg.doc["K"]]
    rollout_eps, output_eps = _bands(cfg, vf)
    scenario = benchmark.Scenario(cfg.model(), failure, vf, cfg.cost_spec(), rollout_eps,
                                  output_eps, "racetrack" if cfg.scenario == "racetrack" else "planar")
    params = cfg.mppi_params()
    threads = args.threads or benchmark.thread_count()

    def progress(r):
        log.info("%s K=%d episode %d: %s after %d steps", r.method, r.K, r.episode_id,
                 r.outcome, r.steps)

    results = benchmark.run_suite(scenario, specs, methods, Ks, params, args.out,
                                  args.trajectories, threads, args.record_timing, progress)
    for table in benchmark.tables_by_k(results, cfg.doc.get("reference", "dualguard"),
                                       bool(cfg.doc.get("relcost_success_only", False))):
        print(table.to_text())
        print()
    return EXIT_OK


def cmd_report(args) -> int:
    results = []
    for p in args.csv:
        if not Path(p).exists():
            raise CliError(f"results file {p} not found", EXIT_IO)
        results.extend(benchmark.read_csv(p))
    if not results:
        raise CliError("no results to report", EXIT_VALIDATION)
    tables = benchmark.tables_by_k(results, args.reference, args.success_only)
    text = "\n\n".join(t.to_text(verbose=args.verbose) for t in tables)
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.txt").write_text(text + "\n")
        (out / "metrics.json").write_text(
            json.dumps([t.to_dict() for t in tables], indent=2) + "\n")
        plotting.plot_outcomes(tables, out / f"outcomes.{args.format}")
        plotting.plot_relcost(tables, out / f"relcost.{args.format}")
        print(f"\nwrote metrics and figures to {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    env_path = Path(args.env)
    if not env_path.exists():
        raise CliError(f"environment file {env_path} not found", EXIT_IO)
    failure = load_failure_set(json.loads(env_path.read_text()))
    for p in args.trajectories:
        if not Path(p).exists():
            raise CliError(f"trajectory file {p} not found", EXIT_IO)
    trajectories = benchmark.load_trajectories(args.trajectories)
    vf = None
    heading = None
    if args.vf:
        if not Path(args.vf).exists():
            raise CliError(f"value field {args.vf} not found", EXIT_IO)
        vf = reachability.load(args.vf)
        heading = math.radians(args.heading)
    plotting.render_scene(failure, trajectories, vf, heading, args.out, args.title)
    print(f"wrote {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualguard", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose-log", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--config", help="JSON run configuration")
        g.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration")
        return p

    p = sub.add_parser("config", help="print or save a preset configuration")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--out")
    p.set_defaults(func=cmd_config)

    p = with_config(sub.add_parser("env", help="generate the environment or track JSON"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_env)

    p = with_config(sub.add_parser("solve", help="solve the value field"))
    p.add_argument("--env", help="environment JSON (default: generate from config)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = with_config(sub.add_parser("episodes", help="sample the episode suite"))
    p.add_argument("--vf", required=True)
    p.add_argument("--env")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_episodes)

    p = with_config(sub.add_parser("run", help="run methods x K x episodes"))
    p.add_argument("--vf", required=True)
    p.add_argument("--env")
    p.add_argument("--episodes", required=True)
    p.add_argument("--out", required=True, help="raw results CSV (resumed if present)")
    p.add_argument("--methods", nargs="+")
    p.add_argument("--K", nargs="+", type=int)
    p.add_argument("--limit", type=int, help="only the first N episodes")
    p.add_argument("--trajectories", help="directory for per-episode trajectory JSON")
    p.add_argument("--threads", type=int)
    p.add_argument("--record-timing", action="store_true",
                   help="fill mean_step_ms (makes the CSV non-reproducible)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate result CSVs into metric tables")
    p.add_argument("csv", nargs="+")
    p.add_argument("--reference", default="dualguard")
    p.add_argument("--success-only", action="store_true",
                   help="RelCost over common successful episodes only")
    p.add_argument("--verbose", action="store_true", help="show both RelCost variants")
    p.add_argument("--out-dir", help="write metrics.txt, metrics.json and figures here")
    p.add_argument("--format", choices=("svg", "png", "pdf"), default="svg")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("render", help="draw environment, BRT slice and trajectories")
    p.add_argument("--env", required=True)
    p.add_argument("--trajectories", nargs="*", default=[])
    p.add_argument("--vf")
    p.add_argument("--heading", type=float, default=225.0, help="BRT slice heading, degrees")
    p.add_argument("--title")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose_log else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except reachability.SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        tail = ", ".join(f"{r:.3e}" for r in exc.residuals[-5:])
        print(f"last residuals: {tail}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, GenerationError, benchmark.EpisodeGenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except reachability.FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
