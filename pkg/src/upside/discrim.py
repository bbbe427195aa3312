"""Policy discriminator q(z|s) and per-policy state buffers."""
from __future__ import annotations

import logging

import numpy as np

from .approx import Adam, Mlp, log_softmax, softmax, softmax_nll

log = logging.getLogger(__name__)


class StateBuffer:
    """FIFO of the last ``capacity`` diffusing-part states of one policy."""

    def __init__(self, owner: int, capacity: int):
        self.owner = owner
        self.capacity = int(capacity)
        self.states = np.zeros((0, 2))

    def __len__(self) -> int:
        return len(self.states)

    def clear(self) -> None:
        self.states = np.zeros((0, 2))

    def extend(self, states) -> None:
        states = np.asarray(states, dtype=float).reshape(-1, 2)
        self.states = np.concatenate([self.states, states])[-self.capacity:]


class Discriminator:
    """Softmax classifier over registered policy ids, fed ``(x, y)`` scaled to ``[-1, 1]^2``."""

    def __init__(self, policy_ids, bounds=(50.0, 50.0), hidden=(64, 64), lr=1e-3,
                 rng: np.random.Generator | None = None):
        self.classes: list[int] = list(policy_ids)
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate policy ids")
        self.bounds = np.asarray(bounds, dtype=float)
        self.hidden = tuple(hidden)
        self.net = Mlp((2, *self.hidden, max(len(self.classes), 1)), rng=rng, zero_output=True)
        self.opt = Adam(lr=lr)
        self._index = {z: k for k, z in enumerate(self.classes)}

    # -- class bookkeeping --
    def __contains__(self, z) -> bool:
        return z in self._index

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def index_of(self, z) -> int:
        return self._index[z]

    def _reindex(self) -> None:
        self._index = {z: k for k, z in enumerate(self.classes)}

    def add_class(self, z: int) -> None:
        if z in self._index:
            raise ValueError(f"policy {z} already registered")
        if not self.classes:
            # the placeholder output row of an empty discriminator becomes z
            self.classes.append(z)
        else:
            self.classes.append(z)
            self.net.add_outputs(1)
            self.opt.sync_shapes(self.net.params)
        self._reindex()

    def remove_class(self, z: int) -> None:
        k = self._index[z]
        self.classes.pop(k)
        if self.classes:
            self.net.remove_output(k)
            self.opt.sync_shapes(self.net.params)
        self._reindex()

    def snapshot(self) -> "Discriminator":
        """Frozen copy used to compute rewards for a block of policy updates."""
        snap = Discriminator.__new__(Discriminator)
        snap.classes = list(self.classes)
        snap.bounds = self.bounds
        snap.hidden = self.hidden
        snap.net = self.net.copy()
        snap.opt = Adam(lr=self.opt.lr)
        snap._index = dict(self._index)
        return snap

    # -- inference --
    def features(self, s) -> np.ndarray:
        return 2.0 * np.asarray(s, dtype=float) / self.bounds - 1.0

    def logits(self, s) -> np.ndarray:
        return self.net.forward(self.features(s))

    def predict(self, s) -> np.ndarray:
        if not self.classes:
            raise ValueError("discriminator has no registered policies")
        return softmax(self.logits(s))

    def log_prob_of(self, s, z) -> np.ndarray:
        """``log q(z|s)`` for one policy over a batch of states."""
        return log_softmax(self.logits(np.atleast_2d(s)))[:, self._index[z]]

    def prob_of(self, s, z) -> np.ndarray:
        return np.exp(self.log_prob_of(s, z))

    # -- training --
    def train_step(self, states, labels) -> float:
        """One gradient step on mean NLL; returns the pre-update loss."""
        states = np.asarray(states, dtype=float).reshape(-1, 2)
        if len(states) == 0:
            log.warning("empty discriminator batch; no update")
            return 0.0
        idx = np.fromiter((self._index[z] for z in labels), dtype=int, count=len(states))
        out, acts = self.net.forward(self.features(states), cache=True)
        loss, grad = softmax_nll(out, idx)
        grads = self.net.backward(acts, grad / len(states))
        self.opt.step(self.net.params, grads)
        return float(loss.mean())


def discriminability(d: Discriminator, buf: StateBuffer) -> float:
    """Buffer-averaged own-class probability of the buffer's owner."""
    if len(buf) == 0:
        raise ValueError(f"state buffer of policy {buf.owner} is empty")
    return float(d.prob_of(buf.states, buf.owner).mean())


class WeightedDataset:
    """Union of state buffers, each sample weighted by its owner's weight."""

    def __init__(self, states: np.ndarray, labels: np.ndarray, weights: np.ndarray):
        self.states = states
        self.labels = labels
        self.p = weights / weights.sum()

    def __len__(self) -> int:
        return len(self.states)

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.choice(len(self.states), size=n, p=self.p)
        return self.states[idx], self.labels[idx]


def build_training_set(buffers: dict, consolidated=(), consolidated_weight: float = 3.0,
                       weights: dict | None = None) -> WeightedDataset:
    """Pool the state buffers; samples of consolidated policies get ``consolidated_weight``
    times the weight of in-training ones. An explicit per-policy ``weights`` map overrides."""
    consolidated = set(consolidated)
    states, labels, w = [], [], []
    for z, buf in buffers.items():
        if len(buf) == 0:
            raise ValueError(f"state buffer of policy {z} is empty")
        if weights is not None:
            wz = weights[z]
        else:
            wz = consolidated_weight if z in consolidated else 1.0
        states.append(buf.states)
        labels.append(np.full(len(buf), z))
        w.append(np.full(len(buf), float(wz)))
    return WeightedDataset(np.concatenate(states), np.concatenate(labels), np.concatenate(w))
