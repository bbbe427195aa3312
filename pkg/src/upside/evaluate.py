"""Bucket coverage, the MI lower bound and unknown-goal fine-tuning."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import env as maze
from .algo import rng_stream
from .rl import COMPASS, QFunction, ReplayBuffer, act, rollout_policy, td_update

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-8


class CoverageGrid:
    """``buckets x buckets`` partition of the maze's bounding box."""

    def __init__(self, width: float = 50.0, height: float = 50.0, buckets: int = 10):
        self.width, self.height, self.buckets = float(width), float(height), int(buckets)
        self.hits = np.zeros((self.buckets, self.buckets), dtype=bool)

    @classmethod
    def for_maze(cls, spec: maze.MazeSpec, buckets: int = 10) -> "CoverageGrid":
        return cls(spec.width, spec.height, buckets)

    def cells(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        ij = np.floor(pts / [self.width / self.buckets, self.height / self.buckets]).astype(int)
        return np.clip(ij, 0, self.buckets - 1)

    def mark(self, pts) -> None:
        ij = self.cells(pts)
        self.hits[ij[:, 0], ij[:, 1]] = True

    @property
    def count(self) -> int:
        return int(self.hits.sum())

    def copy(self) -> "CoverageGrid":
        new = CoverageGrid(self.width, self.height, self.buckets)
        new.hits = self.hits.copy()
        return new


@dataclass
class CoverageResult:
    deterministic: int
    with_diffusing: int
    room_deterministic: int      # buckets holding a visited state of the sealed room
    room_with_diffusing: int
    grid: CoverageGrid = field(repr=False)
    grid_diffusing: CoverageGrid = field(repr=False)


def policy_traces(model, z: int, rng: np.random.Generator, diffusing: bool = True):
    """Deterministic skill chain of ``z`` (greedy skills, endpoint held instead of diffusing)
    and, if ``diffusing``, one full stochastic pass with its random tail."""
    plan = model.plan
    det = rollout_policy(model.spec, model.tree, z, plan.T, 0, rng, mode="eval", window="own")
    if not diffusing or plan.H == 0:
        return det.states[0], None
    full = rollout_policy(model.spec, model.tree, z, plan.T, plan.H, rng, mode="eval", window=plan.window)
    return det.states[0], full.states[0]


def coverage(model, buckets: int = 10, seed: int = 0, policies=None) -> CoverageResult:
    """Buckets visited by the model's policies, with and without one diffusing pass each."""
    rng = rng_stream(seed, "coverage")
    det = CoverageGrid.for_maze(model.spec, buckets)
    room_det = CoverageGrid.for_maze(model.spec, buckets)
    policies = model.policies() if policies is None else policies
    tails = []
    for z in policies:
        trace, tail = policy_traces(model, z, rng)
        det.mark(trace)
        room_det.mark(trace[maze.in_sealed_room(model.spec, trace)])
        if tail is not None:
            tails.append(tail)
    if not policies:
        det.mark(np.asarray(model.spec.s0))
    full, room_full = det.copy(), room_det.copy()
    for tail in tails:
        full.mark(tail)
        room_full.mark(tail[maze.in_sealed_room(model.spec, tail)])
    return CoverageResult(det.count, full.count, room_det.count, room_full.count, det, full)


def coverage_of_states(spec: maze.MazeSpec, states, buckets: int = 10) -> int:
    grid = CoverageGrid.for_maze(spec, buckets)
    grid.mark(states)
    return grid.count


# -- MI lower bound ------------------------------------------------------------

@dataclass
class MiBound:
    value: float            # nats
    n_policies: int
    worst_policy: int
    clamped: bool           # some own-class probability hit the floor
    base: str = "e"


def mi_lower_bound(discr, buffers: dict, weights: dict | None = None) -> MiBound:
    """``log N + min_z mean_s log q(z|s)`` over the buffers ``{z: states}``, in nats.

    ``weights`` optionally maps each policy to per-state probabilities, turning the
    buffer mean into an exact expectation.
    """
    if not buffers:
        raise ValueError("no policies to evaluate")
    clamped = False
    worst, worst_z = math.inf, None
    for z, states in sorted(buffers.items()):
        states = np.asarray(states, dtype=float).reshape(-1, 2)
        if len(states) == 0:
            raise ValueError(f"state buffer of policy {z} is empty")
        q = discr.prob_of(states, z)
        w = None if weights is None else np.asarray(weights[z], dtype=float)
        low = q < PROB_FLOOR if w is None else (q < PROB_FLOOR) & (w > 0)
        clamped |= bool(low.any())
        m = float(np.average(np.log(np.maximum(q, PROB_FLOOR)), weights=w))
        if m < worst:
            worst, worst_z = m, z
    if clamped:
        log.warning("own-class probability below %g clamped in the MI bound", PROB_FLOOR)
    return MiBound(math.log(len(buffers)) + worst, len(buffers), worst_z, clamped)


def model_mi_lower_bound(model) -> MiBound:
    bufs = {z: model.tree.nodes[z].buffer.states for z in model.policies()}
    return mi_lower_bound(model.discr, bufs)


def reevaluate_discriminability(model, z: int, n_states: int | None = None, seed: int = 0) -> float:
    """Fresh-rollout q-hat of ``z`` under the discriminator frozen at its consolidation."""
    plan = model.plan
    d = model.snapshots.get(z, model.discr)
    n_states = n_states or 100 * plan.window_len
    rng = rng_stream(seed, f"reeval{z}")
    n = math.ceil(n_states / plan.window_len)
    mode = "eval" if plan.window == "diffusing" else "train"
    ro = rollout_policy(model.spec, model.tree, z, plan.T, plan.H, rng, mode=mode, eps=model.cfg.eps_end,
                        n=n, window=plan.window)
    return float(d.prob_of(ro.window_states(), z).mean())


# -- downstream unknown-goal fine-tuning -------------------------------------------

@dataclass
class GoalResult:
    goal: tuple
    bucket: int
    policy: int
    tau: int                    # first hit step of the best episode, -1 if never
    value: float                # gamma^tau, 0 if never within the horizon
    final_value: float          # greedy episode after fine-tuning
    selection_score: float
    zero_exploration: bool
    env_steps: int
    curve: list = field(default_factory=list, repr=False)


def first_hits(states: np.ndarray, task: maze.GoalTask) -> np.ndarray:
    """First ``t >= 1`` with the goal within reach, per episode; -1 if none."""
    d = np.linalg.norm(states[:, 1:] - np.asarray(task.goal), axis=-1)
    hit = d <= task.radius
    tau = np.argmax(hit, axis=1) + 1
    return np.where(hit.any(axis=1), tau, -1)


def goal_value(tau, task: maze.GoalTask):
    tau = np.asarray(tau)
    return np.where((tau >= 1) & (tau <= task.horizon), task.discount ** np.maximum(tau, 0), 0.0)


def select_policy(model, task: maze.GoalTask, rng, episodes: int = 10):
    """Roll out every policy stochastically; best mean discounted sparse return, lowest id on ties."""
    plan = model.plan
    best, best_z = -1.0, None
    for z in model.policies():
        ro = rollout_policy(model.spec, model.tree, z, plan.T, plan.H, rng, mode="train",
                            eps=model.cfg.eps_end, n=episodes, window=plan.window)
        score = float(goal_value(first_hits(ro.states, task), task).mean())
        if score > best:
            best, best_z = score, z
    return best_z, best


def downstream_finetune(model, task: maze.GoalTask, budget: int = 50_000, episodes: int = 10,
                        seed: int = 0, parallel: int = 8, update_every: int = 4, lr: float = 1e-3,
                        batch_size: int = 64) -> GoalResult:
    """Select the most promising policy for an unknown goal and fine-tune it on the sparse reward."""
    rng = rng_stream(seed, f"goal{task.goal[0]:.4f},{task.goal[1]:.4f}")
    cfg, plan, spec, tree = model.cfg, model.plan, model.spec, model.tree
    z, score = select_policy(model, task, rng, episodes)
    if z is None:
        raise ValueError("model has no policies")
    zero = score <= 0
    if zero:
        log.info("no policy reached goal %s during exploration; fine-tuning policy %d", task.goal, z)
    path = tree.path_to(z)
    if plan.window == "diffusing":
        # keep the whole skill chain and replace the diffusing part by a new skill
        prefix = path
        tuned = QFunction(COMPASS, (spec.width, spec.height), (cfg.hidden,) * 2, lr, cfg.tau,
                          rng=rng_stream(seed, "finetune_init"))
        eps0 = 1.0
    else:
        # fine-tune the policy's own skill, ancestors fixed
        prefix = path[:-1]
        tuned = tree.nodes[z].skill.copy()
        tuned.opt.lr = lr
        eps0 = cfg.eps_start
    L = len(prefix) * plan.T
    tail = task.horizon - L
    if tail <= 0:
        raise ValueError("selected policy leaves no room for fine-tuning within the horizon")
    replay = ReplayBuffer(max(budget, 1))
    goal = np.asarray(task.goal)

    def reward_fn(s2):
        return (np.linalg.norm(s2 - goal, axis=-1) <= task.radius).astype(float)

    def episode(n, eps):
        states = np.empty((n, task.horizon + 1, 2))
        states[:, 0] = spec.s0
        alive = np.ones(n, dtype=bool)
        tau = np.full(n, -1)
        steps = 0
        t = 0
        for node_id in prefix:
            q = tree.nodes[node_id].skill
            for _ in range(plan.T):
                a = np.argmax(q.values(states[:, t]), axis=1)
                nxt = maze.step_batch(spec, states[:, t], COMPASS[a])
                states[:, t + 1] = np.where(alive[:, None], nxt, states[:, t])
                steps += int(alive.sum())
                t += 1
                hit = alive & (reward_fn(states[:, t]) > 0)
                tau[hit] = t
                alive &= ~hit
        trans = []
        for k in range(tail):
            if not alive.any():
                break
            a = act(tuned, states[:, t], eps, rng)
            nxt = maze.step_batch(spec, states[:, t], COMPASS[a])
            states[:, t + 1] = np.where(alive[:, None], nxt, states[:, t])
            t += 1
            hit = alive & (reward_fn(states[:, t]) > 0)
            done = hit | (k == tail - 1)
            trans.append((states[alive, t - 1], a[alive], states[alive, t], done[alive]))
            steps += int(alive.sum())
            tau[hit] = t
            alive &= ~hit
        return tau, steps, trans

    used, best_tau, curve, updates_due = 0, -1, [], 0.0
    while used < budget:
        frac = min(1.0, used / budget)
        eps = eps0 + (cfg.eps_end - eps0) * frac
        tau, steps, trans = episode(parallel, eps)
        used += steps
        for s, a, s2, done in trans:
            if len(s):
                replay.add(s, a, s2, done, True, 0)
        vals = goal_value(tau, task)
        if vals.max() > goal_value(best_tau, task):
            best_tau = int(tau[np.argmax(vals)])
        curve.append(float(goal_value(best_tau, task)))
        updates_due += sum(len(x[0]) for x in trans) / update_every
        if len(replay) >= batch_size:
            while updates_due >= 1:
                td_update(tuned, replay.sample(rng, batch_size), None, 0, cfg.gamma, reward_fn=reward_fn)
                updates_due -= 1
    final_tau, _, _ = episode(1, 0.0)
    return GoalResult(task.goal, task.bucket, z, best_tau, float(goal_value(best_tau, task)),
                      float(goal_value(final_tau[0], task)), score, zero, used, curve)


def evaluate_goals(model, tasks, budget: int = 50_000, seed: int = 0, **kw) -> list[GoalResult]:
    return [downstream_finetune(model, t, budget=budget, seed=seed, **kw) for t in tasks]


def within_reach(spec: maze.MazeSpec, tasks, depth: int, T: int) -> list:
    """Goals no farther from s0 (geodesically) than ``depth`` skills of length ``T``."""
    d = maze.geodesic_distance(spec, [t.goal for t in tasks])
    return [t for t, di in zip(tasks, d) if di <= depth * T]


def mean_stderr(xs) -> tuple[float, float]:
    xs = np.asarray(list(xs), dtype=float)
    if len(xs) == 0:
        return float("nan"), float("nan")
    se = xs.std(ddof=1) / math.sqrt(len(xs)) if len(xs) > 1 else 0.0
    return float(xs.mean()), float(se)


__all__ = ["CoverageGrid", "CoverageResult", "GoalResult", "MiBound", "coverage",
           "downstream_finetune", "evaluate_goals", "mi_lower_bound", "model_mi_lower_bound",
           "reevaluate_discriminability", "within_reach"]
