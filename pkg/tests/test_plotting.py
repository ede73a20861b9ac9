import numpy as np
import pytest

from dualguard.benchmark import EpisodeResult, tables_by_k
from dualguard.environment import oval_track
from dualguard.plotting import plot_outcomes, plot_relcost, render_scene


def _tables():
    rows = [EpisodeResult(m, 60, i, "Success" if i % 3 else "Timeout", 10, 1.0 + i, None, 1.0, 1.0)
            for m in ("brt_penalty", "dualguard") for i in range(4)]
    return tables_by_k(rows)


def test_render_scene_deterministic(circle_env, circle_field, tmp_path):
    trajs = [{"states": [[0.5, 0.5, 0.0], [1.5, 1.0, 0.0]], "method": "shield",
              "goal": [5.0, 5.0, 0.0]}]
    a = render_scene(circle_env, trajs, circle_field, np.radians(225), tmp_path / "a.svg")
    b = render_scene(circle_env, trajs, circle_field, np.radians(225))
    assert a == b == (tmp_path / "a.svg").read_bytes()
    assert b"<path" in a


def test_render_scene_rejects_bad_input(circle_env, circle_field):
    with pytest.raises(ValueError):
        render_scene(circle_env, [{"states": [1.0, 2.0]}])


def test_render_track():
    data = render_scene(oval_track(), [{"states": [[0, -1.2, 0], [1, -1.2, 0]]}])
    assert data.startswith(b"<?xml")


@pytest.mark.parametrize("suffix", ["svg", "png"])
def test_table_figures(tmp_path, suffix):
    tables = _tables()
    p = plot_outcomes(tables, tmp_path / f"o.{suffix}")
    q = plot_relcost(tables, tmp_path / f"r.{suffix}")
    assert p.stat().st_size > 0 and q.stat().st_size > 0
