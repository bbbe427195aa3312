"""Off-policy skill learning over a discrete action set.

Directed skills are Q-networks over 8 compass moves trained with double
Q-learning. Rewards are never stored: they are recomputed from a frozen
discriminator snapshot every time a batch is replayed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import env as maze
from .approx import Adam, Mlp
from .discrim import Discriminator

REWARD_MODES = ("prob", "log")


class DiscreteActionSet:
    def __init__(self, vectors=None):
        if vectors is None:
            ang = np.arange(8) * np.pi / 4
            vectors = np.round(np.stack([np.cos(ang), np.sin(ang)], axis=1))
        self.vectors = np.asarray(vectors, dtype=float)
        if len(self.vectors) == 0:
            raise ValueError("empty action set")
        if np.abs(self.vectors).max() > 1:
            raise ValueError("actions must lie in [-1, 1]^2")

    def __len__(self) -> int:
        return len(self.vectors)

    def __getitem__(self, idx):
        return self.vectors[idx]


COMPASS = DiscreteActionSet()


class ReplayBuffer:
    """Ring buffer of transitions stored column-wise; grows on demand up to capacity."""

    FIELDS = (("s", 2, float), ("a", 0, np.int64), ("s2", 2, float),
              ("done", 0, bool), ("window", 0, bool), ("z", 0, np.int64))

    def __init__(self, capacity: int = 1_000_000):
        self.capacity = int(capacity)
        self.size = 0
        self.pos = 0
        self._alloc = 0
        self.data: dict[str, np.ndarray] = {}
        self._grow(min(self.capacity, 4096))

    def _grow(self, n: int) -> None:
        new = {}
        for name, width, dtype in self.FIELDS:
            shape = (n, width) if width else (n,)
            arr = np.zeros(shape, dtype=dtype)
            if self._alloc:
                arr[: self._alloc] = self.data[name]
            new[name] = arr
        self.data = new
        self._alloc = n

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, s2, done, window, z) -> None:
        s = np.asarray(s, dtype=float).reshape(-1, 2)
        n = len(s)
        cols = {"s": s, "a": np.asarray(a).reshape(n), "s2": np.asarray(s2, dtype=float).reshape(n, 2),
                "done": np.broadcast_to(done, (n,)), "window": np.broadcast_to(window, (n,)),
                "z": np.broadcast_to(z, (n,))}
        while self._alloc < self.capacity and self.size + n > self._alloc:
            self._grow(min(self.capacity, 2 * self._alloc))
        idx = (self.pos + np.arange(n)) % self.capacity
        for name, col in cols.items():
            self.data[name][idx] = col
        self.pos = int((self.pos + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)

    def sample(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(self.size, size=n)
        return {name: arr[idx] for name, arr in self.data.items()}


class QFunction:
    """Online and target action-value networks for one directed skill."""

    def __init__(self, actions: DiscreteActionSet = COMPASS, bounds=(50.0, 50.0), hidden=(64, 64),
                 lr: float = 1e-3, tau: float = 0.005, rng: np.random.Generator | None = None):
        self.actions = actions
        self.bounds = np.asarray(bounds, dtype=float)
        self.net = Mlp((2, *hidden, len(actions)), rng=rng)
        self.target = self.net.copy()
        self.opt = Adam(lr=lr)
        self.tau = tau

    def features(self, s) -> np.ndarray:
        return 2.0 * np.asarray(s, dtype=float) / self.bounds - 1.0

    def values(self, s) -> np.ndarray:
        return self.net.forward(self.features(s))

    def target_values(self, s) -> np.ndarray:
        return self.target.forward(self.features(s))

    def soft_update(self, tau: float | None = None) -> None:
        tau = self.tau if tau is None else tau
        for p_t, p in zip(self.target.params, self.net.params):
            p_t *= 1.0 - tau
            p_t += tau * p

    def copy(self) -> "QFunction":
        new = QFunction.__new__(QFunction)
        new.actions, new.bounds, new.tau = self.actions, self.bounds, self.tau
        new.net = self.net.copy()
        new.target = self.target.copy()
        new.opt = Adam(lr=self.opt.lr)
        return new


def intrinsic_reward(d: Discriminator, z: int, s, mode: str = "prob", rho: float | None = None):
    """``q(z|s)`` in ``[0, 1]``; in ``log`` mode ``log q(z|s) - log rho(z)`` (rho uniform by default)."""
    if mode == "prob":
        r = d.prob_of(s, z)
    elif mode == "log":
        rho = 1.0 / d.n_classes if rho is None else rho
        r = d.log_prob_of(s, z) - np.log(rho)
    else:
        raise ValueError(f"unknown reward mode {mode!r}")
    return float(r[0]) if np.ndim(s) == 1 else r


def act(q: QFunction, s, eps: float, rng: np.random.Generator):
    """Epsilon-greedy action index; greedy ties go to the lowest index."""
    s = np.asarray(s, dtype=float)
    single = s.ndim == 1
    states = s[None] if single else s
    a = np.argmax(q.values(states), axis=1)
    if eps > 0:
        explore = rng.random(len(states)) < eps
        a = np.where(explore, rng.integers(len(q.actions), size=len(states)), a)
    return int(a[0]) if single else a


def td_targets(r, done, q_next_target, gamma: float, q_next_online=None) -> np.ndarray:
    """``r + gamma (1 - done) Q_target(s', a*)``; ``a*`` is the online argmax when
    online values are given (double estimator) and the target argmax otherwise."""
    q_next_target = np.atleast_2d(q_next_target)
    if q_next_online is None:
        nxt = q_next_target.max(axis=1)
    else:
        a_star = np.argmax(np.atleast_2d(q_next_online), axis=1)
        nxt = q_next_target[np.arange(len(q_next_target)), a_star]
    return np.asarray(r, dtype=float) + gamma * (1.0 - np.asarray(done, dtype=float)) * nxt


def batch_rewards(batch, d_snapshot: Discriminator | None, z: int, mode: str = "prob",
                  rho: float | None = None, reward_fn=None) -> np.ndarray:
    """Rewards for policy ``z`` on a replayed batch: zero outside the reward window."""
    if reward_fn is not None:
        return reward_fn(batch["s2"]) * batch["window"]
    r = intrinsic_reward(d_snapshot, z, batch["s2"], mode=mode, rho=rho)
    return r * batch["window"]


def td_update(q: QFunction, batch, d_snapshot: Discriminator | None, z: int, gamma: float = 0.99,
              mode: str = "prob", double: bool = True, reward_fn=None) -> float:
    """One squared-TD gradient step on ``batch`` followed by a soft target update."""
    if len(batch["s"]) == 0:
        raise ValueError("empty batch")
    r = batch_rewards(batch, d_snapshot, z, mode=mode, reward_fn=reward_fn)
    f2 = q.features(batch["s2"])
    q_next_t = q.target.forward(f2)
    q_next_o = q.net.forward(f2) if double else None
    y = td_targets(r, batch["done"], q_next_t, gamma, q_next_o)
    out, acts = q.net.forward(q.features(batch["s"]), cache=True)
    rows = np.arange(len(y))
    err = out[rows, batch["a"]] - y
    upstream = np.zeros_like(out)
    upstream[rows, batch["a"]] = 2.0 * err / len(y)
    q.opt.step(q.net.params, q.net.backward(acts, upstream))
    q.soft_update()
    return float(np.mean(err ** 2))


# -- composed rollouts ---------------------------------------------------------

@dataclass
class Rollout:
    """A batch of ``n`` episodes of one tree policy.

    ``states`` is ``(n, L + 1, 2)`` including the start state; step ``t`` maps
    ``states[:, t]`` to ``states[:, t + 1]`` with action ``actions[:, t]``.
    """

    node: int
    states: np.ndarray
    actions: np.ndarray
    own_start: int
    window: np.ndarray      # (L,) bool; step t is rewarded and its result enters the state buffer
    skill_end: int          # step index where the node's own skill hands over to diffusion

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def length(self) -> int:
        return self.actions.shape[1]

    @property
    def env_steps(self) -> int:
        return self.n * self.length

    def window_states(self) -> np.ndarray:
        return self.states[:, 1:][:, self.window].reshape(-1, 2)

    def own_transitions(self):
        t0 = self.own_start
        L = self.length
        s = self.states[:, t0:L].reshape(-1, 2)
        s2 = self.states[:, t0 + 1:L + 1].reshape(-1, 2)
        a = self.actions[:, t0:].reshape(-1)
        done = np.zeros((self.n, L - t0), dtype=bool)
        done[:, -1] = True
        window = np.broadcast_to(self.window[t0:], (self.n, L - t0)).reshape(-1)
        return s, a, s2, done.reshape(-1), window

    def endpoint_states(self) -> np.ndarray:
        return self.states[:, self.skill_end]


def rollout_policy(spec: maze.MazeSpec, tree, z: int, T: int, H: int, rng: np.random.Generator,
                   mode: str = "train", eps: float = 0.0, n: int = 1, window: str = "diffusing",
                   random_skill: bool = False, actions: DiscreteActionSet = COMPASS,
                   start=None) -> Rollout:
    """Run ``n`` episodes of tree policy ``z``: ancestor skills (greedy), ``z``'s own skill
    (epsilon-greedy in ``train`` mode, greedy in ``eval``), then ``H`` uniform-random moves.

    ``window="diffusing"`` flags the last ``H`` steps; ``window="own"`` flags every step of
    ``z``'s own segment (skill and diffusion), the reward scope of the DIAYN family.
    ``random_skill`` replaces ``z``'s skill by uniform actions (replay warm-up).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    path = tree.path_to(z)
    L = len(path) * T + H
    states = np.empty((n, L + 1, 2))
    states[:, 0] = maze.reset(spec) if start is None else start
    acts = np.empty((n, L), dtype=np.int64)
    K = len(actions)
    t = 0
    for depth, node_id in enumerate(path):
        q = tree.nodes[node_id].skill
        own = node_id == z
        for _ in range(T):
            s = states[:, t]
            if own and random_skill:
                a = rng.integers(K, size=n)
            elif own and mode == "train":
                a = act(q, s, eps, rng)
            else:
                a = np.argmax(q.values(s), axis=1)
            acts[:, t] = a
            states[:, t + 1] = maze.step_batch(spec, s, actions[a])
            t += 1
    skill_end = t
    for _ in range(H):
        a = rng.integers(K, size=n)
        acts[:, t] = a
        states[:, t + 1] = maze.step_batch(spec, states[:, t], actions[a])
        t += 1
    own_start = (len(path) - 1) * T if path else 0
    flags = np.zeros(L, dtype=bool)
    if window == "diffusing":
        flags[L - H:] = True
    elif window == "own":
        flags[own_start:] = True
    else:
        raise ValueError(f"unknown reward window {window!r}")
    return Rollout(z, states, acts, own_start, flags, skill_end)
