"""Small dense networks with hand-written backprop and an Adam optimizer.

Inputs are row-major batches ``(n, in)``; a single vector is accepted and
returns a vector.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class Mlp:
    """Fully connected net: rectifier on hidden layers, identity on the output."""

    def __init__(self, sizes, rng: np.random.Generator | None = None, zero_output: bool = False):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("an Mlp needs at least input and output sizes")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            if zero_output and k == len(self.sizes) - 2:
                w[:] = 0.0
            self.params += [w, np.zeros(fan_out)]

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def copy(self) -> "Mlp":
        new = Mlp.__new__(Mlp)
        new.sizes = self.sizes
        new.params = [p.copy() for p in self.params]
        return new

    def forward(self, x, cache: bool = False):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None] if single else x
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"input has {h.shape[1]} features, net expects {self.sizes[0]}")
        acts = [h]
        for k in range(self.n_layers):
            h = h @ self.params[2 * k] + self.params[2 * k + 1]
            if k < self.n_layers - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        out = h[0] if single else h
        return (out, acts) if cache else out

    __call__ = forward

    def backward(self, acts, upstream) -> list[np.ndarray]:
        """Gradients of ``sum(output * upstream)`` w.r.t. every parameter."""
        g = np.asarray(upstream, dtype=float)
        if g.ndim == 1:
            g = g[None]
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        for k in reversed(range(self.n_layers)):
            if k < self.n_layers - 1:
                g = g * (acts[k + 1] > 0)
            grads[2 * k] = acts[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            if k:
                g = g @ self.params[2 * k].T
        return grads

    def input_grad(self, acts, upstream) -> np.ndarray:
        g = np.atleast_2d(np.asarray(upstream, dtype=float))
        for k in reversed(range(self.n_layers)):
            if k < self.n_layers - 1:
                g = g * (acts[k + 1] > 0)
            g = g @ self.params[2 * k].T
        return g

    # -- resizing the output layer (discriminator classes come and go) --
    def add_outputs(self, n: int = 1) -> None:
        w, b = self.params[-2], self.params[-1]
        self.params[-2] = np.concatenate([w, np.zeros((w.shape[0], n))], axis=1)
        self.params[-1] = np.concatenate([b, np.zeros(n)])
        self.sizes = self.sizes[:-1] + (self.sizes[-1] + n,)

    def remove_output(self, k: int) -> None:
        self.params[-2] = np.delete(self.params[-2], k, axis=1)
        self.params[-1] = np.delete(self.params[-1], k)
        self.sizes = self.sizes[:-1] + (self.sizes[-1] - 1,)

    # -- checkpoints: flat vector plus a shape header --
    def to_flat(self) -> tuple[dict, np.ndarray]:
        header = {"version": CHECKPOINT_VERSION, "sizes": list(self.sizes),
                  "shapes": [list(p.shape) for p in self.params]}
        return header, np.concatenate([p.ravel() for p in self.params])

    @classmethod
    def from_flat(cls, header: dict, flat: np.ndarray) -> "Mlp":
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        net = cls.__new__(cls)
        net.sizes = tuple(header["sizes"])
        net.params = []
        pos = 0
        for shape in header["shapes"]:
            n = int(np.prod(shape))
            net.params.append(np.asarray(flat[pos:pos + n], dtype=float).reshape(shape).copy())
            pos += n
        if pos != len(flat):
            raise ValueError("checkpoint length does not match its shape header")
        return net


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_nll(logits, label):
    """Loss ``-log softmax(logits)[label]`` and its gradient ``softmax - onehot``.

    Works on one vector with an int label, or a batch with an index array; the
    batched loss is a per-row vector.
    """
    logits = np.asarray(logits, dtype=float)
    lsm = log_softmax(logits)
    if logits.ndim == 1:
        grad = np.exp(lsm)
        grad[label] -= 1.0
        return float(-lsm[label]), grad
    rows = np.arange(len(logits))
    label = np.asarray(label)
    grad = np.exp(lsm)
    grad[rows, label] -= 1.0
    return -lsm[rows, label], grad


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list, repr=False)
    v: list = field(default_factory=list, repr=False)
    skipped: int = 0

    def reset_moments(self, params) -> None:
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def sync_shapes(self, params) -> None:
        """Re-shape moment buffers after the net's output layer changed size."""
        if len(self.m) != len(params):
            self.reset_moments(params)
            return
        for i, p in enumerate(params):
            if self.m[i].shape != p.shape:
                self.m[i] = np.zeros_like(p)
                self.v[i] = np.zeros_like(p)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        """Apply one update in place and return ``params``."""
        if not all(np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            log.warning("non-finite gradient; update skipped (%d so far)", self.skipped)
            return params
        if len(self.m) != len(params):
            self.reset_moments(params)
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def sgd_step(params, grads, opt: Adam):
    return opt.step(params, grads)
