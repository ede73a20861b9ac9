import json

import numpy as np
import pytest

from dualguard.benchmark import EpisodeResult, write_csv
from dualguard.cli import main
from dualguard.config import ConfigError, RunConfig
from dualguard.environment import Environment
from dualguard.reachability import load, save

INTEGRATOR = {
    "model": {"type": "integrator1d"},
    "environment": {"halfspace": {"dim": 0}},
    "grid": {"lower": [-2.0], "upper": [2.0], "counts": [401], "periodic": [False]},
    "mppi": {"sigma": [1.0]},
}


@pytest.fixture
def int_config(tmp_path):
    p = tmp_path / "int.json"
    p.write_text(json.dumps(INTEGRATOR))
    return p


def test_solve_integrator(tmp_path, int_config, capsys):
    out = tmp_path / "a.hjvf"
    assert main(["solve", "--config", str(int_config), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    frac = float(text.split("brt_volume_fraction:")[1].split()[0])
    assert frac == pytest.approx(201 / 401)
    vf = load(out)
    assert vf.model_id == "integrator1d"
    again = tmp_path / "b.hjvf"
    main(["solve", "--config", str(int_config), "--out", str(again)])
    assert out.read_bytes() == again.read_bytes()


def test_dimension_mismatch_is_validation_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(dict(INTEGRATOR, grid={"lower": [0, 0], "upper": [1, 1],
                                                  "counts": [5, 5], "periodic": [False, False]})))
    assert main(["solve", "--config", str(p), "--out", str(tmp_path / "x")]) == 2
    assert "dimensions" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_non_convergence_exit_code(tmp_path, capsys):
    doc = {"model": {"type": "double_integrator"}, "environment": {"halfspace": {"dim": 0}},
           "grid": {"lower": [-0.5, -2.0], "upper": [2.0, 2.0], "counts": [41, 41],
                    "periodic": [False, False]},
           "solver": {"max_iterations": 3}, "mppi": {"sigma": [1.0]}}
    p = tmp_path / "di.json"
    p.write_text(json.dumps(doc))
    assert main(["solve", "--config", str(p), "--out", str(tmp_path / "x")]) == 3
    assert "residuals" in capsys.readouterr().err


def test_missing_files(tmp_path, capsys):
    rc = main(["episodes", "--preset", "desk", "--vf", str(tmp_path / "none.hjvf"),
               "--out", str(tmp_path / "e.json")])
    assert rc == 4
    assert "dualguard solve" in capsys.readouterr().err
    assert main(["solve", "--config", str(tmp_path / "nope.json"), "--out", "x"]) == 4
    assert main(["report", str(tmp_path / "none.csv")]) == 4


def test_corrupt_value_field(tmp_path, int_config):
    bad = tmp_path / "bad.hjvf"
    bad.write_bytes(b"garbage")
    rc = main(["episodes", "--config", str(int_config), "--vf", str(bad),
               "--out", str(tmp_path / "e.json")])
    assert rc == 4


def test_config_and_env(tmp_path, capsys):
    cfg = tmp_path / "desk.json"
    assert main(["config", "--preset", "desk", "--out", str(cfg)]) == 0
    assert RunConfig.load(cfg).doc == RunConfig.preset("desk").doc
    env = tmp_path / "env.json"
    assert main(["env", "--config", str(cfg), "--seed", "5", "--out", str(env)]) == 0
    loaded = Environment.load(env)
    assert len(loaded.obstacles) == 15 and loaded.seed == 5
    assert main(["env", "--preset", "racetrack", "--out", str(tmp_path / "t.json")]) == 0


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig.preset("desk", {"methods": ["nope"]})
    with pytest.raises(ConfigError):
        RunConfig.preset("desk", {"grid": {"periodic": [False, False, False]}})
    with pytest.raises(ConfigError):
        RunConfig.preset("desk", {"K": [0]})
    with pytest.raises(ConfigError):
        RunConfig.preset("desk", {"mppi": {"sigma": [1.0, 2.0]}})
    with pytest.raises(ConfigError):
        RunConfig.preset("nope")


def _results():
    rng = np.random.default_rng(0)
    rows = []
    for K in (250, 60):
        for m in ("obs_penalty", "shield", "dualguard"):
            for i in range(6):
                out = "Failure" if (m == "obs_penalty" and i < 2) else "Success"
                rows.append(EpisodeResult(m, K, i, out, 100, float(rng.uniform(5, 9)), None,
                                          0.1, 0.1))
    return rows


def test_report_writes_tables_and_figures(tmp_path, capsys):
    csv_path = tmp_path / "r.csv"
    write_csv(csv_path, _results())
    out = tmp_path / "report"
    assert main(["report", str(csv_path), "--verbose", "--out-dir", str(out)]) == 0
    text = capsys.readouterr().out
    assert "K = 250" in text and "K = 60" in text and "RelCost(succ)" in text
    assert (out / "metrics.txt").read_text().startswith("K = 250")
    tables = json.loads((out / "metrics.json").read_text())
    assert [t["K"] for t in tables] == [250, 60]
    for name in ("outcomes.svg", "relcost.svg"):
        assert (out / name).read_bytes().startswith(b"<?xml")
    first = (out / "outcomes.svg").read_bytes()
    main(["report", str(csv_path), "--out-dir", str(out)])
    assert (out / "outcomes.svg").read_bytes() == first


def test_render_is_byte_identical(tmp_path, circle_env, circle_field):
    env = tmp_path / "env.json"
    circle_env.save(env)
    vf = tmp_path / "c.hjvf"
    save(circle_field, vf)
    traj = tmp_path / "t.json"
    traj.write_text(json.dumps({"method": "dualguard", "K": 60, "episode_id": 0,
                                "outcome": "Success",
                                "states": [[0.5, 0.5, 0.0], [1.0, 1.2, 0.5], [2.0, 1.5, 0.3]]}))
    outs = []
    for name in ("a.svg", "b.svg"):
        args = ["render", "--env", str(env), "--trajectories", str(traj), "--vf", str(vf),
                "--title", "demo", "--out", str(tmp_path / name)]
        assert main(args) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    assert b"<path" in outs[0]


def test_run_end_to_end(tmp_path, circle_env, circle_field, capsys):
    env = tmp_path / "env.json"
    circle_env.save(env)
    vf = tmp_path / "c.hjvf"
    save(circle_field, vf)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "environment": {"path": "env.json"},
        "grid": circle_field.grid.to_dict(),
        "mppi": {"horizon": 10},
        "episodes": {"count": 2, "horizon": 0.2, "min_separation": 4.0},
    }))
    eps = tmp_path / "eps.json"
    assert main(["episodes", "--config", str(cfg), "--vf", str(vf), "--out", str(eps)]) == 0
    csvs = []
    for threads in ("1", "2"):
        out = tmp_path / f"r{threads}.csv"
        rc = main(["run", "--config", str(cfg), "--vf", str(vf), "--episodes", str(eps),
                   "--out", str(out), "--methods", "dualguard", "shield", "--K", "8",
                   "--threads", threads, "--trajectories", str(tmp_path / "traj")])
        assert rc == 0
        csvs.append(out.read_bytes())
    assert csvs[0] == csvs[1]
    assert len(list((tmp_path / "traj").glob("*.json"))) == 4
    assert "K = 8" in capsys.readouterr().out
