import math

import numpy as np
import pytest

from dualguard.environment import (Environment, ObstacleSpec, RaceTrack, Task, generate_environment,
                                   load_failure_set, oval_track)


@pytest.fixture
def one_circle():
    return Environment((0.0, 0.0), (10.0, 10.0), np.array([[5.0, 5.0, 1.0]]), True)


def test_signed_distance_examples(one_circle):
    assert one_circle.l(np.array([7.0, 5.0, 0.3])) == pytest.approx(1.0)
    assert one_circle.l(np.array([5.5, 5.0, 0.0])) == pytest.approx(-0.5)
    assert one_circle.l(np.array([0.0, 3.0, 0.0])) == pytest.approx(0.0)


def test_signed_distance_agrees_with_containment():
    env = generate_environment(11, ObstacleSpec(count=10))
    pts = np.random.default_rng(1).uniform(0, 10, (2000, 2))
    pts = np.hstack([pts, np.zeros((len(pts), 1))])
    inside = env.l(pts) <= 0
    assert np.array_equal(inside, env.inside_failure(pts))


def test_generation_is_deterministic():
    a = generate_environment(5, ObstacleSpec(count=15))
    b = generate_environment(5, ObstacleSpec(count=15))
    assert np.array_equal(a.obstacles, b.obstacles)
    assert len(a.obstacles) == 15
    d = 2 * a.obstacles[:, 2]
    assert d.min() >= 0.35 and d.max() <= 3.5


def test_generation_rejects_overfull_spec():
    with pytest.raises(ValueError):
        generate_environment(0, ObstacleSpec(count=500))


def test_environment_roundtrip(tmp_path, one_circle):
    path = tmp_path / "env.json"
    one_circle.save(path)
    back = Environment.load(path)
    assert np.array_equal(back.obstacles, one_circle.obstacles)
    assert back.boundary_is_failure


def test_environment_validation():
    with pytest.raises(ValueError):
        Environment((0, 0), (1, 1), np.array([[0.5, 0.5, -1.0]]))
    with pytest.raises(ValueError):
        Environment((0, 0), (1, 1), np.array([[2.0, 0.5, 0.1]]))


def test_track_distance():
    track = oval_track()
    p = track.centerline[3]
    assert track.l(np.array([p[0], p[1], 0.0])) == pytest.approx(0.4)
    assert track.centerline_distance(np.array([0.0, -1.1, 0.0])) == pytest.approx(0.1, abs=1e-9)
    assert track.l(np.array([0.0, 0.0, 0.0])) < 0


def test_track_progress_increases_along_centerline():
    track = oval_track()
    prog = [track.progress(np.array([*p, 0.0])) for p in track.centerline[:10]]
    assert np.all(np.diff(prog) > 0)
    assert track.length > 2 * 3.0


def test_self_intersecting_track_rejected():
    with pytest.raises(ValueError):
        RaceTrack(np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float), 0.1)


def test_load_failure_set_dispatch(one_circle):
    assert isinstance(load_failure_set(one_circle.to_dict()), Environment)
    assert isinstance(load_failure_set(oval_track().to_dict()), RaceTrack)


def test_task_reached():
    t = Task((1.0, 1.0, 0.0))
    assert t.reached([1.05, 1.0, 2.0])
    assert not t.reached([1.2, 1.0, 0.0])
    with pytest.raises(ValueError):
        Task((0.0, 0.0, 0.0), goal_radius=0.0)
    assert math.isclose(t.goal_radius, 0.1)
