"""UPSIDE tree expansion, policy learning, greedy node adaptation and the baselines.

Every variant runs on the same :class:`SkillLearner` machinery; they differ in
which states carry reward (the diffusing window or the whole skill), whether
the root owns a discriminator class, and whether expansion goes past the root.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import env as maze
from .discrim import Discriminator, build_training_set, discriminability
from .records import RunRecord, config_hash
from .rl import COMPASS, QFunction, ReplayBuffer, rollout_policy, td_update
from .tree import ROOT, Tree

VARIANTS = ("upside", "flat_upside", "diayn_n", "diayn_curr", "diayn_hier")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class UpsideConfig:
    variant: str = "upside"
    eta: float = 0.8
    n_start: int = 4
    n_max: int = 8
    T: int = 10
    H: int = 10
    B: int | None = None             # state-buffer size; 20 x reward-window length when None
    J: int = 10                      # policy-update rounds per frozen discriminator
    k_discr: int = 200
    k_pol: int = 30
    k_steps: int = 10_000            # env interactions per policy-learning call
    t_max: int = 500_000
    h_max: int = 200
    gamma: float = 0.99
    tau: float = 0.005
    lr_pol: float = 3e-3
    lr_discr: float = 3e-3
    batch_pol: int = 64
    batch_discr: int = 64
    hidden: int = 64
    k_initial: int = 1000
    replay_capacity: int = 1_000_000
    eps_start: float = 0.3
    eps_end: float = 0.05
    consolidated_weight: float = 3.0
    reward_mode: str = "prob"
    discr_reinit: bool = False
    confirm: bool = False            # re-check an early stop on fresh, unseen buffer states
    n_z: int = 10                    # diayn_n policy count
    flat_T: int = 40
    flat_H: int = 10
    flat_n: int = 10                 # flat_upside policy count
    diayn_T: int = 50
    curr_n_max: int = 20

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0 < self.eta < 1:
            raise ConfigError("eta must lie in (0, 1)")
        if not 1 <= self.n_start <= self.n_max:
            raise ConfigError("need 1 <= n_start <= n_max")
        if self.t_max < 0 or self.k_steps <= 0:
            raise ConfigError("budgets must be positive")
        if self.reward_mode not in ("prob", "log"):
            raise ConfigError(f"unknown reward mode {self.reward_mode!r}")
        if self.T < 0 or self.H < 0:
            raise ConfigError("T and H must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "UpsideConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
            kwargs[k] = v
        return cls(**kwargs)

    def resolved(self) -> "Plan":
        """Per-variant structure of policies and rewards."""
        v = self.variant
        if v == "upside":
            return Plan(self.T, self.H, "diffusing", True, True, self.n_start, self.n_max, True)
        if v == "flat_upside":
            return Plan(self.flat_T, self.flat_H, "diffusing", True, False, self.flat_n,
                        self.flat_n, False)
        if v == "diayn_hier":
            return Plan(self.T, 0, "own", False, True, self.n_start, self.n_max, True)
        if v == "diayn_curr":
            return Plan(self.diayn_T, 0, "own", False, False, 1, self.curr_n_max, True)
        return Plan(self.diayn_T, 0, "own", False, False, self.n_z, self.n_z, False)


@dataclass(frozen=True)
class Plan:
    T: int
    H: int
    window: str            # "diffusing" or "own"
    root_class: bool       # the root's diffusing cloud is a discriminator class
    deep: bool             # expand beyond the root
    n_start: int
    n_max: int
    adaptive: bool         # grow/shrink under the eta constraint

    @property
    def window_len(self) -> int:
        return self.H if self.window == "diffusing" else self.T + self.H


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent counter-based stream per (seed, component)."""
    return np.random.Generator(np.random.Philox(key=[seed, zlib.crc32(name.encode())]))


# -- greedy node adaptation ----------------------------------------------------

def node_adaptation(learner, n_start: int, n_max: int, eta: float) -> list:
    """Greedy search for the largest sibling set whose members are all eta-discriminable.

    ``learner`` provides ``add(n)`` (creates candidates), ``remove(z)``, and ``learn()``
    returning ``{id: discriminability}`` for the current candidates. An optional
    ``exhausted`` attribute stops the search once the interaction budget is gone.
    Returns the surviving ids; may be empty.
    """
    learner.add(n_start)
    q = learner.learn()
    if not q:
        return []

    def stop():
        return getattr(learner, "exhausted", False)

    if min(q.values()) >= eta:
        while q and min(q.values()) >= eta and len(q) < n_max and not stop():
            learner.add(1)
            q = learner.learn()
    while q and min(q.values()) < eta:
        if stop():
            for z in [z for z, v in q.items() if v < eta]:
                learner.remove(z)
                del q[z]
            break
        worst = min(q, key=lambda k: (q[k], k))
        learner.remove(worst)
        del q[worst]
        if q:
            q = learner.learn()
    return sorted(q)


def optimal_count(g, n_max: int, eta: float) -> int:
    """``max{N <= n_max : g(N) >= eta}`` (0 if none), by enumeration."""
    ok = [n for n in range(1, n_max + 1) if g(n) >= eta]
    return max(ok) if ok else 0


# -- the learner ------------------------------------------------------------------

@dataclass
class ExpansionState:
    parent: int
    candidates: list = field(default_factory=list)
    replay: ReplayBuffer | None = None


class SkillLearner:
    """Owns one run: maze, tree, discriminator, replay, RNG streams and the step counter."""

    def __init__(self, spec: maze.MazeSpec, cfg: UpsideConfig, seed: int = 0,
                 record: RunRecord | None = None):
        self.spec = spec
        self.cfg = cfg
        self.plan = cfg.resolved()
        self.seed = seed
        self.bounds = (spec.width, spec.height)
        self.B = cfg.B if cfg.B is not None else 20 * self.plan.window_len
        self.tree = Tree(self.B)
        self.steps = 0
        self.record = record if record is not None else RunRecord(config_hash(cfg), seed)
        self.rng_rollout = rng_stream(seed, "rollout")
        self.rng_init = rng_stream(seed, "init")
        self.rng_discr = rng_stream(seed, "discr")
        self.rng_replay = rng_stream(seed, "replay")
        self.discr = self._new_discriminator()
        self.snapshots: dict[int, Discriminator] = {}   # discriminator at each node's consolidation
        self.expansion: ExpansionState | None = None
        self.exhausted = False
        self.last_q: dict[int, float] = {}
        self.learn_calls = 0

    # -- plumbing --
    def _new_discriminator(self) -> Discriminator:
        ids = [k for k in self.tree.nodes if k != ROOT or self.plan.root_class]
        return Discriminator(ids, self.bounds, (self.cfg.hidden,) * 2, self.cfg.lr_discr, rng=self.rng_init)

    def make_skill(self) -> QFunction:
        return QFunction(COMPASS, self.bounds, (self.cfg.hidden,) * 2, self.cfg.lr_pol,
                         self.cfg.tau, rng=self.rng_init)

    def budget_left(self) -> int:
        return self.cfg.t_max - self.steps

    def rollout(self, z, mode="train", n=1, eps=0.0, random_skill=False):
        ro = rollout_policy(self.spec, self.tree, z, self.plan.T, self.plan.H, self.rng_rollout,
                            mode=mode, eps=eps, n=n, window=self.plan.window, random_skill=random_skill)
        self.steps += ro.env_steps
        self.record.rollouts.append((z, self.tree.nodes[z].depth, ro.length, ro.n))
        return ro

    def epsilon(self, z) -> float:
        frac = min(1.0, self.tree.nodes[z].train_steps / self.cfg.k_steps)
        return self.cfg.eps_start + (self.cfg.eps_end - self.cfg.eps_start) * frac

    def _store(self, ro) -> None:
        if self.expansion is not None and self.expansion.replay is not None and ro.node != ROOT:
            s, a, s2, done, window = ro.own_transitions()
            self.expansion.replay.add(s, a, s2, done, window, ro.node)

    def collect_buffer(self, z) -> None:
        """Clear ``z``'s state buffer and refill it with ``B`` reward-window states."""
        wl = self.plan.window_len
        if wl == 0:
            raise ConfigError("policies have an empty reward window")
        n = math.ceil(self.B / wl)
        # skills run greedily here so the buffer reflects the policy that would be deployed
        ro = self.rollout(z, mode="eval" if self.plan.window == "diffusing" else "train",
                          n=n, eps=self.epsilon(z) if z != ROOT else 0.0)
        self._store(ro)
        buf = self.tree.nodes[z].buffer
        buf.clear()
        buf.extend(ro.window_states())

    def train_discriminator(self, steps: int) -> float:
        buffers = {k: nd.buffer for k, nd in self.tree.nodes.items() if k in self.discr and len(nd.buffer)}
        if not buffers:
            return 0.0
        consolidated = {k for k in buffers if self.tree.nodes[k].consolidated}
        data = build_training_set(buffers, consolidated, self.cfg.consolidated_weight)
        loss = 0.0
        for _ in range(steps):
            s, y = data.sample(self.rng_discr, self.cfg.batch_discr)
            loss = self.discr.train_step(s, y)
        return loss

    # -- PolicyLearning --
    def policy_learning(self, candidates, budget: int | None = None, eta: float | None = None) -> dict:
        """Alternate buffer refresh, discriminator training and skill updates for
        ``candidates`` until all are eta-discriminable or ``budget`` interactions are spent."""
        cfg = self.cfg
        budget = cfg.k_steps if budget is None else budget
        start = self.steps
        self.learn_calls += 1
        if cfg.discr_reinit:
            self.discr = self._new_discriminator()
        replay = self.expansion.replay
        q: dict[int, float] = {}
        while True:
            for z in candidates:
                self.collect_buffer(z)
            self.train_discriminator(cfg.k_discr)
            q = {z: discriminability(self.discr, self.tree.nodes[z].buffer) for z in candidates}
            if eta is not None and min(q.values()) >= eta:
                if not cfg.confirm:
                    break
                # the discriminator has just been fit to these buffers; confirm on fresh ones
                for z in candidates:
                    self.collect_buffer(z)
                q = {z: discriminability(self.discr, self.tree.nodes[z].buffer) for z in candidates}
                if min(q.values()) >= eta:
                    break
            if self.steps - start >= budget or self.steps >= cfg.t_max:
                break
            snap = self.discr.snapshot()
            for _ in range(cfg.J):
                for z in candidates:     # round robin
                    node = self.tree.nodes[z]
                    ro = self.rollout(z, mode="train", eps=self.epsilon(z))
                    node.train_steps += ro.env_steps
                    self._store(ro)
                    for _ in range(cfg.k_pol):
                        batch = replay.sample(self.rng_replay, cfg.batch_pol)
                        td_update(node.skill, batch, snap, z, cfg.gamma, mode=cfg.reward_mode)
                if self.steps - start >= budget or self.steps >= cfg.t_max:
                    break
        if self.steps >= cfg.t_max:
            self.exhausted = True
        self.last_q = q
        return q

    def seed_replay(self, candidates) -> None:
        """Fill a fresh replay buffer with ``k_initial`` transitions from uniform-random skills."""
        replay = self.expansion.replay
        k = 0
        while len(replay) < self.cfg.k_initial and self.steps < self.cfg.t_max:
            z = candidates[k % len(candidates)]
            ro = self.rollout(z, mode="train", random_skill=True)
            self._store(ro)
            k += 1

    # -- node registry helpers used by node adaptation --
    def add_candidates(self, n: int) -> list[int]:
        ex = self.expansion
        plan = self.plan
        h_max = self.cfg.h_max if plan.deep else max(self.cfg.h_max, plan.T + plan.H)
        ids = self.tree.add_children(ex.parent, n, plan.T, plan.H, h_max, self.make_skill)
        for c in ids:
            self.discr.add_class(c)
            self.record.log(self.steps, "add", node=c, parent=ex.parent, n=len(ex.candidates) + 1)
            ex.candidates.append(c)
        if ids and ex.replay is not None and len(ex.replay) < self.cfg.k_initial:
            self.seed_replay(ids)
        return ids

    def remove_candidate(self, z: int) -> None:
        ex = self.expansion
        self.record.log(self.steps, "remove", node=z, parent=ex.parent,
                        qhat=self.last_q.get(z), n=len(ex.candidates) - 1)
        self.tree.remove_node(z)
        self.discr.remove_class(z)
        ex.candidates.remove(z)

    def consolidate(self, ids, q) -> None:
        snap = self.discr.snapshot()
        for c in ids:
            node = self.tree.nodes[c]
            node.consolidated = True
            node.discriminability = float(q[c])
            self.snapshots[c] = snap
            self.record.log(self.steps, "consolidate", node=c, parent=node.parent, qhat=node.discriminability)

    def init_root(self) -> None:
        root = self.tree.nodes[ROOT]
        if self.plan.root_class and self.plan.H > 0:
            self.collect_buffer(ROOT)
            root.discriminability = 1.0
        self.record.log(self.steps, "root", node=ROOT, qhat=root.discriminability)


class _Adapter:
    """Binds one expansion of a :class:`SkillLearner` to :func:`node_adaptation`."""

    def __init__(self, learner: SkillLearner, eta: float | None):
        self.l = learner
        self.eta = eta

    @property
    def exhausted(self) -> bool:
        return self.l.exhausted

    def add(self, n):
        if self.l.exhausted:
            return
        self.l.add_candidates(n)

    def remove(self, z):
        self.l.remove_candidate(z)

    def learn(self):
        cands = list(self.l.expansion.candidates)
        if not cands:
            return {}
        if self.l.exhausted:
            return {z: self.l.last_q.get(z, 0.0) for z in cands}
        q = self.l.policy_learning(cands, eta=self.eta)
        self.l.record.log(self.l.steps, "learn", parent=self.l.expansion.parent, n=len(cands),
                          qhat=min(q.values()), detail=_fmt_q(q))
        return q


def _fmt_q(q: dict) -> str:
    return " ".join(f"{k}:{v:.4f}" for k, v in sorted(q.items()))


def expand(learner: SkillLearner, z: int) -> list[int]:
    """Dequeued node ``z``: create children, learn, adapt their number, consolidate survivors."""
    cfg, plan = learner.cfg, learner.plan
    learner.record.log(learner.steps, "expand", node=z, qhat=learner.tree.nodes[z].discriminability)
    learner.expansion = ExpansionState(z, [], ReplayBuffer(cfg.replay_capacity))
    if plan.adaptive:
        survivors = node_adaptation(_Adapter(learner, cfg.eta), plan.n_start, plan.n_max, cfg.eta)
    else:
        ad = _Adapter(learner, None)
        ad.add(plan.n_start)
        cands = list(learner.expansion.candidates)
        q = learner.policy_learning(cands, budget=learner.budget_left(), eta=None) if cands else {}
        learner.record.log(learner.steps, "learn", parent=z, n=len(cands),
                           qhat=min(q.values()) if q else None, detail=_fmt_q(q))
        survivors = sorted(q)
    q = learner.last_q
    # anything still in training that failed the constraint is dropped
    for c in list(learner.expansion.candidates):
        if c not in survivors:
            learner.remove_candidate(c)
    learner.consolidate(survivors, q)
    node = learner.tree.nodes[z]
    if not survivors:
        node.terminal = True
        learner.record.log(learner.steps, "dead_end", node=z)
    learner.expansion = None
    return survivors


def run(spec: maze.MazeSpec, cfg: UpsideConfig, seed: int = 0, record: RunRecord | None = None,
        coverage_fn=None) -> SkillLearner:
    """Unsupervised phase for any variant. Returns the learner holding the final tree."""
    learner = SkillLearner(spec, cfg, seed, record)
    rec = learner.record
    if cfg.t_max <= 0:
        rec.log(0, "done", n=len(learner.tree), detail="no budget")
        rec.env_steps = 0
        return learner
    learner.init_root()
    tree = learner.tree
    while learner.steps < cfg.t_max:
        z = tree.next_to_expand()
        if z is None:
            break
        if z != ROOT and not learner.plan.deep:
            continue
        survivors = expand(learner, z)
        for c in survivors:
            tree.enqueue(c)
        if coverage_fn is not None:
            rec.log(learner.steps, "coverage", n=len(tree), coverage=coverage_fn(learner))
    rec.env_steps = learner.steps
    rec.metrics.update(n_policies=len(tree) - 1, n_consolidated=len(tree.consolidated_ids()) - 1,
                       max_depth=max(nd.depth for nd in tree.nodes.values()))
    if not learner.plan.adaptive:
        rec.metrics["intrinsic_return"] = intrinsic_return(learner)
    rec.log(learner.steps, "done", n=len(tree), detail="budget" if learner.steps >= cfg.t_max else "queue empty")
    return learner


def run_upside(spec, cfg: UpsideConfig, seed: int = 0, record=None, coverage_fn=None) -> SkillLearner:
    if cfg.variant != "upside":
        cfg = replace(cfg, variant="upside")
    return run(spec, cfg, seed, record, coverage_fn)


def run_baseline(spec, cfg: UpsideConfig, seed: int = 0, record=None, coverage_fn=None) -> SkillLearner:
    if cfg.variant == "upside" or cfg.variant not in VARIANTS:
        raise ConfigError(f"{cfg.variant!r} is not a baseline variant")
    return run(spec, cfg, seed, record, coverage_fn)


def intrinsic_return(learner: SkillLearner, episodes: int = 10) -> float:
    """Mean cumulated intrinsic reward of stochastic rollouts, the flat baselines' selection score."""
    rng = rng_stream(learner.seed, "selection")
    total = []
    for z in learner.tree.consolidated_ids():
        if z == ROOT or z not in learner.discr:
            continue
        ro = rollout_policy(learner.spec, learner.tree, z, learner.plan.T, learner.plan.H, rng,
                            mode="train", eps=learner.cfg.eps_end, n=episodes, window=learner.plan.window)
        s = ro.states[:, 1:][:, ro.window]
        r = learner.discr.prob_of(s.reshape(-1, 2), z).reshape(ro.n, -1).sum(axis=1)
        total.append(r.mean())
    return float(np.mean(total)) if total else 0.0


def select_model(learners: list[SkillLearner]) -> SkillLearner:
    """Adaptive variants: most consolidated policies; fixed-size flat ones: highest intrinsic return."""
    if not learners:
        raise ValueError("no models to select from")
    if not learners[0].plan.adaptive:
        return max(learners, key=lambda l: l.record.metrics.get("intrinsic_return", intrinsic_return(l)))
    return max(learners, key=lambda l: len(l.tree.consolidated_ids()))
