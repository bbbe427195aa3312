"""Toy model of assigning N skills to M states under a uniform skill prior.

``p[n, m]`` is the probability that skill ``n`` lands in state ``m``. All MI
values here are in bits unless a function says otherwise.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

MAX_CELLS = 20      # N * M limit for exhaustive search
ROW_TOL = 1e-9


def _check_rows(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.size == 0:
        raise ValueError("assignment must be a non-empty N x M matrix")
    if (p < -ROW_TOL).any():
        raise ValueError("assignment has negative entries")
    if not np.allclose(p.sum(axis=1), 1.0, atol=1e-8):
        raise ValueError("assignment rows must sum to 1")
    return np.clip(p, 0.0, None)


def discriminability_matrix(p) -> np.ndarray:
    """``q[n, m] = p[n, m] / sum_n p[n, m]`` (0 where the column is empty)."""
    p = _check_rows(p)
    col = p.sum(axis=0, keepdims=True)
    return np.divide(p, col, out=np.zeros_like(p), where=col > 0)


def uniform_mi(p) -> float:
    """``log2 N + (1/N) sum p log2(p / colsum)`` with ``0 log 0 = 0``."""
    p = _check_rows(p)
    return _mi_unchecked(p)


def _mi_unchecked(p: np.ndarray) -> float:
    n = p.shape[0]
    col = p.sum(axis=0, keepdims=True)
    mask = p > 0
    terms = np.zeros_like(p)
    terms[mask] = p[mask] * np.log2(p[mask] / np.broadcast_to(col, p.shape)[mask])
    v = math.log2(n) + terms.sum() / n
    return 0.0 if abs(v) < 1e-12 else v


def min_discriminability(p) -> float:
    """``min_n max_m q[n, m]``: the least discriminable skill's best state."""
    return float(discriminability_matrix(p).max(axis=1).min())


def simplex_grid(m: int, resolution: int) -> np.ndarray:
    """All points of the ``m``-simplex with coordinates in multiples of ``1/resolution``."""
    pts = []
    for cuts in itertools.combinations(range(resolution + m - 1), m - 1):
        parts = np.diff((-1, *cuts, resolution + m - 1)) - 1
        pts.append(parts / resolution)
    return np.array(pts, dtype=float)


def brute_force_uniform_mi(n: int, m: int, resolution: int = 4) -> tuple[float, np.ndarray]:
    """Maximise :func:`uniform_mi` over row-stochastic ``n x m`` matrices.

    Every deterministic assignment is enumerated, then the best one is refined
    row by row over a simplex grid until no single-row move improves it. The
    objective is convex in ``p``, so the deterministic optimum is global and the
    refinement acts as a check.
    """
    if n < 1 or m < 1:
        raise ValueError("need at least one skill and one state")
    if n * m > MAX_CELLS:
        raise ValueError(f"N*M = {n * m} exceeds the exhaustive-search cap of {MAX_CELLS}")
    eye = np.eye(m)
    best, best_p = -math.inf, None
    for assign in itertools.product(range(m), repeat=n):
        p = eye[list(assign)]
        v = _mi_unchecked(p)
        if v > best + 1e-12:
            best, best_p = v, p
    grid = simplex_grid(m, resolution)
    improved = True
    while improved:
        improved = False
        for row in range(n):
            for cand in grid:
                p = best_p.copy()
                p[row] = cand
                v = _mi_unchecked(p)
                if v > best + 1e-12:
                    best, best_p, improved = v, p, True
    return float(best), best_p


def delta_criterion(n: int, eta: float, base: float = 2.0) -> float:
    """``log N - ((N-1)/N) log(N-1) + (1/N) log eta``; removing a skill helps when <= 0."""
    if n < 2:
        raise ValueError("need N >= 2")
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    lg = lambda x: math.log(x) / math.log(base)  # noqa: E731
    return lg(n) - (n - 1) / n * lg(n - 1) + lg(eta) / n


def delta_threshold(n: int) -> float:
    """Largest eta with ``delta_criterion(n, eta) <= 0``: ``(N-1)^(N-1) / N^N``."""
    return (n - 1) ** (n - 1) / n ** n


def removal_sweep(n_max: int = 5, m_max: int = 4) -> list[dict]:
    """For every (N, M) compare the optimum with one skill fewer, alongside Delta.

    ``holds`` is the removal implication; ``bound_holds`` checks the inequality it rests
    on, ``I*(N) <= Delta(N, eta) + (N-1)/N I*(N-1)``, which binds even when Delta > 0.
    """
    rows = []
    for m in range(1, m_max + 1):
        for n in range(2, n_max + 1):
            v_n, p_n = brute_force_uniform_mi(n, m)
            v_prev, _ = brute_force_uniform_mi(n - 1, m)
            eta = min_discriminability(p_n)
            d = delta_criterion(n, eta)
            bound = d + (n - 1) / n * v_prev
            rows.append({"N": n, "M": m, "mi": v_n, "mi_fewer": v_prev, "eta": eta, "delta": d,
                         "bound": bound, "bound_holds": v_n <= bound + 1e-9,
                         "holds": d > 0 or v_prev >= v_n - 1e-12})
    return rows


# -- exact MI on a synthetic joint ----------------------------------------------------

def exact_mi(p_s_given_z, rho=None) -> float:
    """``I(Z; S)`` in nats by enumeration, for ``p_s_given_z`` of shape ``(N, M)``."""
    p = _check_rows(p_s_given_z)
    n = p.shape[0]
    rho = np.full(n, 1.0 / n) if rho is None else np.asarray(rho, dtype=float)
    joint = rho[:, None] * p
    ps = joint.sum(axis=0, keepdims=True)
    pz = joint.sum(axis=1, keepdims=True)
    mask = joint > 0
    return float((joint[mask] * np.log(joint[mask] / (pz * ps)[mask])).sum())


def posterior(p_s_given_z, rho=None) -> np.ndarray:
    """Exact ``p(z | s)`` as an ``(N, M)`` table."""
    p = _check_rows(p_s_given_z)
    n = p.shape[0]
    rho = np.full(n, 1.0 / n) if rho is None else np.asarray(rho, dtype=float)
    joint = rho[:, None] * p
    col = joint.sum(axis=0, keepdims=True)
    return np.divide(joint, col, out=np.zeros_like(joint), where=col > 0)


class TabularDiscriminator:
    """Discriminator over integer states encoded as points ``(m, 0)``."""

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=float)
        self.classes = list(range(self.table.shape[0]))

    def prob_of(self, states, z) -> np.ndarray:
        idx = np.rint(np.asarray(states, dtype=float).reshape(-1, 2)[:, 0]).astype(int)
        return self.table[z, idx]


def synthetic_joint(rng: np.random.Generator, n_max: int = 6, m_max: int = 8,
                    sparsity: float = 0.3) -> np.ndarray:
    """Random ``p(s|z)`` with some exact zeros, every row a proper distribution."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    p = rng.dirichlet(np.full(m, 0.5), size=n)
    p[rng.random((n, m)) < sparsity] = 0.0
    for row in p:
        if row.sum() == 0:
            row[rng.integers(m)] = 1.0
    return p / p.sum(axis=1, keepdims=True)
