import numpy as np
import pytest

from upside import env as maze
from upside.discrim import Discriminator
from upside.rl import (COMPASS, DiscreteActionSet, QFunction, ReplayBuffer, act, batch_rewards,
                       intrinsic_reward, rollout_policy, td_targets, td_update)
from upside.tree import ROOT, Tree


def test_compass_moves():
    v = COMPASS.vectors
    assert len(COMPASS) == 8
    assert np.all(np.abs(v) <= 1)
    assert {tuple(x) for x in v} == {(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)}
    with pytest.raises(ValueError):
        DiscreteActionSet([[2, 0]])


def test_replay_ring_buffer():
    rb = ReplayBuffer(capacity=5)
    for k in range(7):
        rb.add([k, k], k, [k + 1, k], False, True, 1)
    assert len(rb) == 5
    assert sorted(rb.data["a"].tolist()) == [2, 3, 4, 5, 6]
    b = rb.sample(np.random.default_rng(0), 100)
    assert set(b["a"]) <= {2, 3, 4, 5, 6}
    np.testing.assert_array_equal(b["s2"][:, 0], b["s"][:, 0] + 1)
    with pytest.raises(ValueError):
        ReplayBuffer(3).sample(np.random.default_rng(0), 1)


def test_replay_grows_past_initial_allocation():
    rb = ReplayBuffer(capacity=10_000)
    s = np.zeros((5000, 2))
    rb.add(s, np.zeros(5000, int), s, False, False, 0)
    rb.add(s, np.ones(5000, int), s, True, False, 0)
    assert len(rb) == 10_000 and rb.data["done"].sum() == 5000


def test_td_targets_by_hand():
    qt = np.array([[1.0, 3.0], [2.0, 0.5]])
    qo = np.array([[5.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(td_targets([1, 0], [False, False], qt, 0.5), [2.5, 1.0])
    np.testing.assert_allclose(td_targets([1, 0], [False, False], qt, 0.5, qo), [1.5, 0.25])
    np.testing.assert_allclose(td_targets([1, 0], [True, False], qt, 0.5, qo), [1.0, 0.25])


def test_greedy_ties_go_to_lowest_index():
    q = QFunction(rng=np.random.default_rng(0))
    for p in q.net.params[-2:]:
        p[...] = 0
    assert act(q, [10, 10], 0.0, np.random.default_rng(0)) == 0
    np.testing.assert_array_equal(act(q, np.zeros((4, 2)), 0.0, None), 0)


def test_epsilon_one_is_uniform():
    q = QFunction(rng=np.random.default_rng(0))
    a = act(q, np.zeros((8000, 2)), 1.0, np.random.default_rng(1))
    counts = np.bincount(a, minlength=8)
    assert counts.min() > 850 and counts.max() < 1150


def test_rewards_are_zero_outside_window():
    d = Discriminator([1, 2])
    batch = {"s2": np.array([[1.0, 1.0], [2.0, 2.0]]), "window": np.array([True, False])}
    np.testing.assert_allclose(batch_rewards(batch, d, 1), [0.5, 0.0])
    np.testing.assert_allclose(batch_rewards(batch, d, 1, mode="log"), [0.0, 0.0])
    assert intrinsic_reward(d, 2, [3.0, 3.0]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        intrinsic_reward(d, 2, [3.0, 3.0], mode="bogus")


def chain_oracle(n, gamma, r_left, r_right):
    """Value iteration on a deterministic chain whose two end cells are absorbing."""
    q = np.zeros((n, 2))
    for _ in range(500):
        v = q.max(axis=1)
        new = np.zeros_like(q)
        for x in range(1, n - 1):
            for a, dx in enumerate((-1, 1)):
                y = x + dx
                r = r_left if y == 0 else r_right if y == n - 1 else 0.0
                new[x, a] = r + (0.0 if y in (0, n - 1) else gamma * v[y])
        q = new
    return q


@pytest.mark.parametrize("double", [True, False])
def test_q_learning_recovers_chain_values(double):
    n, gamma = 7, 0.9
    oracle = chain_oracle(n, gamma, r_left=0.5, r_right=1.0)
    actions = DiscreteActionSet([[-1, 0], [1, 0]])
    q = QFunction(actions, bounds=(n - 1, 1.0), hidden=(32, 32), lr=3e-3, tau=0.05,
                  rng=np.random.default_rng(0))
    xs = np.arange(1, n - 1)
    s = np.repeat(xs, 2)
    a = np.tile([0, 1], len(xs))
    s2 = s + np.where(a == 0, -1, 1)
    batch = {"s": np.stack([s, np.zeros_like(s)], 1).astype(float), "a": a,
             "s2": np.stack([s2, np.zeros_like(s2)], 1).astype(float),
             "done": (s2 == 0) | (s2 == n - 1), "window": np.ones(len(s), bool)}

    def reward(states):
        x = states[:, 0]
        return np.where(x == 0, 0.5, np.where(x == n - 1, 1.0, 0.0))

    for _ in range(4000):
        td_update(q, batch, None, 1, gamma=gamma, double=double, reward_fn=reward)
    learned = q.values(np.stack([xs, np.zeros_like(xs)], 1).astype(float))
    np.testing.assert_allclose(learned, oracle[1:-1], atol=0.03)
    np.testing.assert_array_equal(learned.argmax(1), oracle[1:-1].argmax(1))


def grown_tree(T, depth):
    rng = np.random.default_rng(0)
    t = Tree(100)
    z = ROOT
    for _ in range(depth):
        (c,) = t.add_children(z, 1, T, 10, 1000, lambda: QFunction(rng=rng))
        t.nodes[c].consolidated = True
        z = c
    return t, z


@pytest.mark.parametrize("depth", [0, 1, 3])
@pytest.mark.parametrize("window", ["diffusing", "own"])
def test_rollout_shapes_and_windows(depth, window):
    spec = maze.load_maze("bottleneck")
    T, H = 5, 4
    t, z = grown_tree(T, depth)
    ro = rollout_policy(spec, t, z, T, H, np.random.default_rng(0), n=3, window=window, eps=0.3)
    L = depth * T + H
    assert ro.states.shape == (3, L + 1, 2) and ro.length == L and ro.env_steps == 3 * L
    np.testing.assert_array_equal(ro.states[:, 0], np.tile(spec.s0, (3, 1)))
    own_start = max(depth - 1, 0) * T
    assert ro.own_start == own_start and ro.skill_end == depth * T
    expect = np.zeros(L, bool)
    expect[(L - H) if window == "diffusing" else own_start:] = True
    np.testing.assert_array_equal(ro.window, expect)
    assert len(ro.window_states()) == 3 * expect.sum()
    s, a, s2, done, win = ro.own_transitions()
    assert len(s) == 3 * (L - own_start) and done.sum() == 3
    # every transition is a real env step
    np.testing.assert_allclose(maze.step_batch(spec, s, COMPASS[a]), s2)
    for row in ro.states:
        assert all(maze.is_valid(spec, p) for p in row)


def test_ancestor_skills_are_greedy():
    spec = maze.load_maze("wallfree")
    t, z = grown_tree(5, 2)
    parent = t.nodes[z].parent
    a = rollout_policy(spec, t, z, 5, 0, np.random.default_rng(1), eps=1.0, n=4)
    b = rollout_policy(spec, t, parent, 5, 0, np.random.default_rng(2), mode="eval", n=1)
    np.testing.assert_array_equal(a.states[:, :6], np.broadcast_to(b.states[:, :6], (4, 6, 2)))


def test_rollout_rejects_bad_arguments():
    spec = maze.load_maze("wallfree")
    t, z = grown_tree(5, 1)
    with pytest.raises(ValueError):
        rollout_policy(spec, t, z, 5, 2, np.random.default_rng(0), mode="greedy")
    with pytest.raises(ValueError):
        rollout_policy(spec, t, z, 5, 2, np.random.default_rng(0), window="all")
