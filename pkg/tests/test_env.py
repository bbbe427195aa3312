import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from upside import env as maze

MAZE_NAMES = sorted(maze.MAZES)


@pytest.mark.parametrize("name", MAZE_NAMES)
def test_canonical_mazes_are_valid(name):
    spec = maze.load_maze(name)
    assert spec.width == spec.height == 50
    assert maze.is_valid(spec, np.asarray(spec.s0))
    np.testing.assert_array_equal(maze.reset(spec), spec.s0)


def test_unknown_maze_is_rejected():
    with pytest.raises(ValueError):
        maze.load_maze("no-such-maze")


def test_bad_specs_are_rejected():
    with pytest.raises(ValueError):
        maze.MazeSpec("x", 10, 10, ((2, 2, 0, 1),), (1, 1))
    with pytest.raises(ValueError):
        maze.MazeSpec("x", 10, 10, ((8, 8, 5, 1),), (1, 1))
    with pytest.raises(ValueError):
        maze.MazeSpec("x", 10, 10, ((0, 0, 4, 4),), (2, 2))   # s0 inside a wall


def test_json_round_trip(tmp_path):
    spec = maze.load_maze("bottleneck")
    assert maze.MazeSpec.loads(spec.dumps()) == spec
    path = tmp_path / "m.json"
    path.write_text(json.dumps(spec.to_dict()))
    assert maze.load_maze(str(path)) == spec


def test_actions_are_clipped():
    spec = maze.load_maze("wallfree")
    np.testing.assert_allclose(maze.step(spec, [10, 10], [3, 0]), [11, 10])
    np.testing.assert_allclose(maze.step(spec, [10, 10], [-0.5, 7]), [9.5, 11])


def test_outer_boundary_stops_motion():
    spec = maze.load_maze("wallfree")
    np.testing.assert_allclose(maze.step(spec, [0, 0], [-1, -1]), [0, 0])
    np.testing.assert_allclose(maze.step(spec, [49.5, 25], [1, 0]), [50, 25])


def test_wall_stops_motion_just_short():
    spec = maze.MazeSpec("w", 10, 10, ((5.0, 0.0, 1.0, 10.0),), (1, 1))
    out = maze.step(spec, [4.5, 3.0], [1, 0])
    assert out[0] < 5.0 and out[0] > 4.99
    assert out[1] == 3.0
    # sliding along the wall face is not allowed to tunnel
    out = maze.step(spec, [4.9995, 3.0], [1, 1])
    assert out[0] <= 5.0


@settings(max_examples=300, deadline=None)
@given(name=st.sampled_from(MAZE_NAMES),
       x=st.floats(0, 50), y=st.floats(0, 50),
       ax=st.floats(-2, 2), ay=st.floats(-2, 2))
def test_step_keeps_states_valid_and_never_crosses_walls(name, x, y, ax, ay):
    spec = maze.load_maze(name)
    s = np.array([x, y])
    if not maze.is_valid(spec, s):
        return
    s2 = maze.step(spec, s, [ax, ay])
    assert maze.is_valid(spec, s2)
    # displacement is a prefix of the clipped action
    d = np.clip([ax, ay], -1, 1)
    assert np.linalg.norm(s2 - s) <= np.linalg.norm(d) + 1e-9
    for t in np.linspace(0, 1, 25):
        assert maze.is_valid(spec, s + t * (s2 - s))


def test_batch_step_matches_single_step():
    spec = maze.load_maze("bottleneck")
    rng = np.random.default_rng(0)
    s = np.tile(spec.s0, (64, 1))
    for _ in range(30):
        a = rng.uniform(-1, 1, size=(64, 2))
        nxt = maze.step_batch(spec, s, a)
        single = np.array([maze.step(spec, si, ai) for si, ai in zip(s, a)])
        np.testing.assert_array_equal(nxt, single)
        s = nxt


def test_sealed_room_only_through_the_gap():
    spec = maze.load_maze("bottleneck")
    room = np.array([[10.0, 40.0]])
    assert maze.in_sealed_room(spec, room)[0]
    assert not maze.in_sealed_room(spec, np.asarray(spec.s0))[0]
    d = maze.geodesic_distance(spec, room)[0]
    assert np.isfinite(d)
    # much longer than the straight line: the path runs through the gap at y in [44, 48]
    assert d > 1.5 * np.linalg.norm(room[0] - spec.s0)
    closed = maze.MazeSpec("closed", 50, 50, spec.walls + ((24.5, 43.0, 1.0, 6.0),), spec.s0)
    assert np.isinf(maze.geodesic_distance(closed, room)[0])


def test_geodesic_matches_euclid_without_walls():
    spec = maze.load_maze("wallfree")
    pts = np.array([[25.0, 25.0], [40.0, 25.0], [25.0, 5.0], [35.0, 35.0]])
    d = maze.geodesic_distance(spec, pts)
    e = np.linalg.norm(pts - spec.s0, axis=1)
    # 8-connected grid paths overestimate off-axis distances by at most ~8%
    assert np.all(d >= e - 1.0)
    assert np.all(d <= 1.09 * e + 1.0)


def test_goal_sampling():
    spec = maze.load_maze("bottleneck")
    goals = maze.sample_goals(spec, buckets=14, per_bucket=3, seed=0)
    assert len(goals) == 42
    assert sorted({g.bucket for g in goals}) == list(range(14))
    assert all(maze.is_valid(spec, np.asarray(g.goal)) for g in goals)
    assert np.isfinite(maze.geodesic_distance(spec, [g.goal for g in goals])).all()
    again = maze.sample_goals(spec, buckets=14, per_bucket=3, seed=0)
    assert [g.goal for g in goals] == [g.goal for g in again]
    other = maze.sample_goals(spec, buckets=14, per_bucket=3, seed=1)
    assert [g.goal for g in goals] != [g.goal for g in other]


def test_goal_reward():
    task = maze.GoalTask((10.0, 10.0))
    assert maze.goal_reward(task, [10.5, 10.5]) == 1
    assert maze.goal_reward(task, [12.0, 10.0]) == 0
    np.testing.assert_array_equal(maze.goal_reward(task, [[10, 11], [10, 11.01]]), [1, 0])
    with pytest.raises(ValueError):
        maze.GoalTask((0, 0), radius=0)
