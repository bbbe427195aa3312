"""Continuous 2D point mazes with axis-aligned walls.

States are ``(x, y)`` positions stored as float arrays; batches are ``(n, 2)``
arrays. Every function here is pure over an immutable :class:`MazeSpec`.
"""
from __future__ import annotations

import functools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.cluster.vq import kmeans2
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

WALL_MARGIN = 1e-3


@dataclass(frozen=True)
class MazeSpec:
    """Maze layout. Walls are ``(x, y, w, h)`` rectangles, lower-left anchored."""

    name: str
    width: float
    height: float
    walls: tuple[tuple[float, float, float, float], ...]
    s0: tuple[float, float]

    def __post_init__(self):
        walls = tuple(tuple(float(v) for v in w) for w in self.walls)
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "s0", (float(self.s0[0]), float(self.s0[1])))
        for x, y, w, h in walls:
            if w <= 0 or h <= 0:
                raise ValueError(f"degenerate wall {(x, y, w, h)}")
            if x < 0 or y < 0 or x + w > self.width or y + h > self.height:
                raise ValueError(f"wall {(x, y, w, h)} outside the {self.width}x{self.height} box")
        if not is_valid(self, np.asarray(self.s0)):
            raise ValueError(f"s0={self.s0} is not a free state of maze {self.name!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "width": self.width,
            "height": self.height,
            "walls": [list(w) for w in self.walls],
            "s0": list(self.s0),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MazeSpec":
        return cls(
            name=d["name"],
            width=float(d["width"]),
            height=float(d["height"]),
            walls=tuple(tuple(w) for w in d.get("walls", [])),
            s0=tuple(d["s0"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "MazeSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GoalTask:
    goal: tuple[float, float]
    radius: float = 1.0
    horizon: int = 200
    discount: float = 0.99
    bucket: int = -1

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("goal radius must be positive")
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")


# -- canonical layouts -------------------------------------------------------

def bottleneck_maze() -> MazeSpec:
    """Four 25x25 rooms around an open hub at the centre.

    The bottom-left, bottom-right and top-right rooms open onto the hub; the
    top-left room is sealed off from it and only reachable from the top-right
    room through a 4-unit gap high up in the vertical divider.
    """
    walls = (
        (0.0, 24.5, 21.0, 1.0),    # TL | BL divider
        (24.5, 0.0, 1.0, 21.0),    # BL | BR divider
        (29.0, 24.5, 21.0, 1.0),   # BR | TR divider
        (24.5, 28.5, 1.0, 15.5),   # TL | TR divider, below the gap
        (24.5, 48.0, 1.0, 2.0),    # TL | TR divider, above the gap
        (20.5, 24.5, 1.0, 5.0),    # hub seal, vertical
        (20.5, 28.5, 5.0, 1.0),    # hub seal, horizontal
    )
    return MazeSpec("bottleneck", 50.0, 50.0, walls, (25.0, 25.0))


def umaze() -> MazeSpec:
    """U-shaped corridor of width 10 opening to the right; s0 at the end of the lower arm."""
    return MazeSpec("umaze", 50.0, 50.0, ((10.0, 10.0, 40.0, 30.0),), (45.0, 5.0))


def wallfree_maze() -> MazeSpec:
    return MazeSpec("wallfree", 50.0, 50.0, (), (25.0, 25.0))


MAZES = {"bottleneck": bottleneck_maze, "umaze": umaze, "wallfree": wallfree_maze}

# regions behind a bottleneck, as (x, y, w, h) rectangles keyed by maze name
SEALED_ROOMS = {
    "bottleneck": ((0.0, 25.5, 20.5, 24.5), (0.0, 29.5, 24.5, 20.5)),
}


def in_sealed_room(spec: MazeSpec, pts) -> np.ndarray:
    """True for states inside the maze's hard-to-reach room (all False if it has none)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    out = np.zeros(len(pts), dtype=bool)
    for x, y, w, h in SEALED_ROOMS.get(spec.name, ()):
        out |= (pts[:, 0] >= x) & (pts[:, 0] <= x + w) & (pts[:, 1] >= y) & (pts[:, 1] <= y + h)
    return out


def load_maze(ref: str) -> MazeSpec:
    """Resolve a canonical maze name or a path to a JSON maze file."""
    if ref in MAZES:
        return MAZES[ref]()
    path = Path(ref)
    if not path.exists():
        raise ValueError(f"unknown maze {ref!r}; expected one of {sorted(MAZES)} or a JSON file")
    return MazeSpec.loads(path.read_text())


# -- dynamics ----------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _collision_boxes(spec: MazeSpec) -> np.ndarray:
    """Walls as ``(x0, y0, x1, y1)``; edges lying on the outer box are pushed
    outwards so a state sitting on the boundary cannot slip through a wall."""
    if not spec.walls:
        return np.zeros((0, 4))
    boxes = []
    for x, y, w, h in spec.walls:
        x0, y0, x1, y1 = x, y, x + w, y + h
        x0 = -1.0 if x0 <= 0 else x0
        y0 = -1.0 if y0 <= 0 else y0
        x1 = spec.width + 1.0 if x1 >= spec.width else x1
        y1 = spec.height + 1.0 if y1 >= spec.height else y1
        boxes.append((x0, y0, x1, y1))
    return np.asarray(boxes, dtype=float)


def is_valid(spec: MazeSpec, s) -> np.ndarray | bool:
    """True for states inside the closed bounding box and outside every wall interior."""
    s = np.asarray(s, dtype=float)
    pts = np.atleast_2d(s)
    ok = (pts[:, 0] >= 0) & (pts[:, 0] <= spec.width) & (pts[:, 1] >= 0) & (pts[:, 1] <= spec.height)
    boxes = _collision_boxes(spec)
    if len(boxes):
        inside = (
            (pts[:, None, 0] > boxes[None, :, 0])
            & (pts[:, None, 0] < boxes[None, :, 2])
            & (pts[:, None, 1] > boxes[None, :, 1])
            & (pts[:, None, 1] < boxes[None, :, 3])
        )
        ok &= ~inside.any(axis=1)
    return bool(ok[0]) if s.ndim == 1 else ok


def reset(spec: MazeSpec) -> np.ndarray:
    return np.array(spec.s0, dtype=float)


def step_batch(spec: MazeSpec, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Vectorised :func:`step` over ``(n, 2)`` states and actions."""
    s = np.asarray(s, dtype=float)
    d = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
    n = len(s)
    length = np.hypot(d[:, 0], d[:, 1])
    moving = length > 0

    # leaving the closed box: truncate exactly on the boundary
    hi = np.array([spec.width, spec.height])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t_axis = np.where(d > 0, (hi - s) / d, np.where(d < 0, -s / d, np.inf))
    t_box = np.clip(t_axis.min(axis=1), 0.0, 1.0)

    t_wall = np.full(n, np.inf)
    boxes = _collision_boxes(spec)
    if len(boxes):
        lo = boxes[None, :, :2]
        up = boxes[None, :, 2:]
        sp = s[:, None, :]
        dp = d[:, None, :]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t1 = (lo - sp) / dp
            t2 = (up - sp) / dp
        still = dp == 0
        strictly_in = (sp > lo) & (sp < up)
        tmin = np.where(still, np.where(strictly_in, -np.inf, np.inf), np.minimum(t1, t2))
        tmax = np.where(still, np.where(strictly_in, np.inf, -np.inf), np.maximum(t1, t2))
        t_enter = tmin.max(axis=2)
        t_exit = tmax.min(axis=2)
        hit = (t_enter < t_exit) & (t_exit > 0) & (t_enter < 1)
        t_wall = np.where(hit, np.maximum(t_enter, 0.0), np.inf).min(axis=1)

    blocked = moving & (t_wall <= t_box)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t_back = np.where(blocked, np.maximum(t_wall - WALL_MARGIN / np.where(moving, length, 1.0), 0.0), t_box)
    out = s + d * t_back[:, None]
    # rounding at the outer boundary only; walls near it are extended outwards
    return np.clip(out, 0.0, hi)


def step(spec: MazeSpec, s, a) -> np.ndarray:
    """Move by the clipped action; motion stops just short of the first wall it meets."""
    return step_batch(spec, np.asarray(s, dtype=float)[None], np.asarray(a, dtype=float)[None])[0]


def goal_reward(task: GoalTask, s) -> np.ndarray | int:
    s = np.asarray(s, dtype=float)
    dist = np.linalg.norm(s - np.asarray(task.goal), axis=-1)
    r = (dist <= task.radius).astype(int)
    return int(r) if s.ndim == 1 else r


# -- free-space geometry -------------------------------------------------------

@dataclass(frozen=True)
class FreeGrid:
    """Reachable free cells on a regular grid, with 8-connected geodesic distances from s0."""

    resolution: float
    centers: np.ndarray = field(repr=False)      # (k, 2) reachable cell centres
    index: np.ndarray = field(repr=False)        # (nx, ny) -> row in centers, -1 if not reachable
    dist_from_s0: np.ndarray = field(repr=False)  # (k,)

    def cell_of(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ij = np.floor(pts / self.resolution).astype(int)
        ij[:, 0] = np.clip(ij[:, 0], 0, self.index.shape[0] - 1)
        ij[:, 1] = np.clip(ij[:, 1], 0, self.index.shape[1] - 1)
        return self.index[ij[:, 0], ij[:, 1]]


@functools.lru_cache(maxsize=16)
def free_grid(spec: MazeSpec, resolution: float = 0.5) -> FreeGrid:
    nx = int(round(spec.width / resolution))
    ny = int(round(spec.height / resolution))
    xs = (np.arange(nx) + 0.5) * resolution
    ys = (np.arange(ny) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    free = is_valid(spec, pts).reshape(nx, ny)
    labels, _ = ndimage.label(free)
    i0 = min(int(spec.s0[0] / resolution), nx - 1)
    j0 = min(int(spec.s0[1] / resolution), ny - 1)
    lab = labels[i0, j0]
    if lab == 0:
        # s0 sits on a cell whose centre is blocked: take the nearest free cell's component
        cand = np.argwhere(free)
        k = np.argmin(((cand - [i0, j0]) ** 2).sum(axis=1))
        i0, j0 = cand[k]
        lab = labels[i0, j0]
    reach = labels == lab
    index = np.full((nx, ny), -1, dtype=int)
    cells = np.argwhere(reach)
    index[cells[:, 0], cells[:, 1]] = np.arange(len(cells))
    centers = (cells + 0.5) * resolution

    rows, cols, wts = [], [], []
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        a = cells
        b = cells + [di, dj]
        ok = (b[:, 0] >= 0) & (b[:, 0] < nx) & (b[:, 1] >= 0) & (b[:, 1] < ny)
        a, b = a[ok], b[ok]
        ib = index[b[:, 0], b[:, 1]]
        ok = ib >= 0
        if di and dj:
            # no corner cutting
            ok &= reach[a[:, 0] + di, a[:, 1]] & reach[a[:, 0], a[:, 1] + dj] if len(a) else ok
        rows.append(index[a[ok, 0], a[ok, 1]])
        cols.append(ib[ok])
        wts.append(np.full(ok.sum(), resolution * np.hypot(di, dj)))
    rows, cols, wts = (np.concatenate(v) for v in (rows, cols, wts))
    graph = coo_matrix((wts, (rows, cols)), shape=(len(cells), len(cells))).tocsr()
    dist = dijkstra(graph, directed=False, indices=index[i0, j0])
    dist = dist + float(np.hypot(*(np.asarray(spec.s0) - centers[index[i0, j0]])))
    return FreeGrid(resolution, centers, index, dist)


def geodesic_distance(spec: MazeSpec, pts) -> np.ndarray:
    """Shortest free-space path length from s0, on a 0.5-unit grid; inf when unreachable."""
    grid = free_grid(spec)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    idx = grid.cell_of(pts)
    out = np.full(len(pts), np.inf)
    ok = idx >= 0
    out[ok] = grid.dist_from_s0[idx[ok]] + np.hypot(*(pts[ok] - grid.centers[idx[ok]]).T)
    return out


def sample_goals(
    spec: MazeSpec,
    buckets: int = 14,
    per_bucket: int = 3,
    seed: int = 0,
    radius: float = 1.0,
    horizon: int = 200,
    discount: float = 0.99,
    skipped: list | None = None,
) -> list[GoalTask]:
    """Partition reachable free space into ``buckets`` compact regions and draw
    ``per_bucket`` goals uniformly from each.

    Regions are k-means clusters of the free grid cells, so they tile the
    reachable space. Empty regions are skipped with a warning and their ids
    appended to ``skipped`` when given.
    """
    grid = free_grid(spec)
    rng = np.random.default_rng(seed)
    if buckets == 1:
        labels = np.zeros(len(grid.centers), dtype=int)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, labels = kmeans2(grid.centers, buckets, minit="++", seed=rng, iter=30)
    goals: list[GoalTask] = []
    for b in range(buckets):
        cells = grid.centers[labels == b]
        if len(cells) == 0:
            warnings.warn(f"goal bucket {b} has no free space; skipped")
            if skipped is not None:
                skipped.append(b)
            continue
        drawn = 0
        while drawn < per_bucket:
            c = cells[rng.integers(len(cells))]
            g = c + rng.uniform(-0.5, 0.5, size=2) * grid.resolution
            if is_valid(spec, g):
                goals.append(GoalTask((float(g[0]), float(g[1])), radius, horizon, discount, bucket=b))
                drawn += 1
    return goals
