"""Matplotlib figures for mazes, policy trees, coverage and goal results.

Every figure is written as SVG. Colours are keyed by policy id so the same
node keeps its colour across re-renders and across figures.
"""
from __future__ import annotations

import contextlib
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

STYLE = {
    "font.size": 9,
    "font.family": "DejaVu Sans",
    "axes.linewidth": 0.8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.titlesize": 10,
    "lines.linewidth": 1.2,
    "legend.frameon": False,
    "figure.dpi": 100,
    "svg.fonttype": "none",
    "svg.hashsalt": "upside",     # stable element ids between runs
}

WALL_COLOR = "#3a3a3a"
PALETTE = plt.get_cmap("tab20").colors


def node_color(z: int):
    return PALETTE[(2 * z + z // 10) % len(PALETTE)]


@contextlib.contextmanager
def style():
    with plt.rc_context(STYLE):
        yield


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def draw_maze(ax, spec) -> None:
    ax.add_patch(Rectangle((0, 0), spec.width, spec.height, fill=False, lw=1.5, ec=WALL_COLOR))
    for x, y, w, h in spec.walls:
        ax.add_patch(Rectangle((x, y), w, h, fc=WALL_COLOR, ec="none"))
    ax.plot(*spec.s0, marker="*", ms=9, color="k", zorder=5)
    ax.set_xlim(-1, spec.width + 1)
    ax.set_ylim(-1, spec.height + 1)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    for side in ("left", "bottom"):
        ax.spines[side].set_visible(False)


def plot_policies(model, path, seed: int = 0, diffusing_episodes: int = 5):
    """Maze, each policy's deterministic trace and a scatter of its diffusing states."""
    from .algo import rng_stream
    from .rl import rollout_policy

    rng = rng_stream(seed, "render")
    plan = model.plan
    with style():
        fig, ax = plt.subplots(figsize=(5, 5))
        draw_maze(ax, model.spec)
        for z in model.policies():
            c = node_color(z)
            det = rollout_policy(model.spec, model.tree, z, plan.T, 0, rng, mode="eval", window="own")
            tr = det.states[0]
            if len(tr) > 1:
                ax.plot(tr[:, 0], tr[:, 1], color=c, lw=1.0)
            ro = rollout_policy(model.spec, model.tree, z, plan.T, plan.H, rng, mode="eval",
                                n=diffusing_episodes, window=plan.window)
            pts = ro.window_states()
            ax.scatter(pts[:, 0], pts[:, 1], s=3, color=c, alpha=0.6, lw=0)
            end = tr[-1]
            ax.annotate(str(z), end, fontsize=6, ha="center", va="center", color="k")
        ax.set_title(f"{model.cfg.variant}: {len(model.policies())} policies")
        return save(fig, path)


def _tree_layout(tree) -> dict:
    """Leaves spread evenly left to right; parents centred over their children."""
    pos, counter = {}, [0]

    def place(z):
        kids = [c for c in tree.nodes[z].children if tree.nodes[c].consolidated]
        if not kids:
            pos[z] = (counter[0], -tree.nodes[z].depth)
            counter[0] += 1
        else:
            for c in kids:
                place(c)
            pos[z] = (np.mean([pos[c][0] for c in kids]), -tree.nodes[z].depth)

    place(0)
    return pos


def plot_tree(model, path):
    """Tree topology with each node's discriminability at consolidation."""
    tree = model.tree
    pos = _tree_layout(tree)
    width = max(4.0, 0.45 * (max(p[0] for p in pos.values()) + 1))
    depth = max(-p[1] for p in pos.values())
    with style():
        fig, ax = plt.subplots(figsize=(width, 1.0 + 0.9 * depth))
        for z, (x, y) in pos.items():
            parent = tree.nodes[z].parent
            if parent is not None:
                px, py = pos[parent]
                ax.plot([px, x], [py, y], color="#999999", lw=0.8, zorder=1)
        for z, (x, y) in pos.items():
            ax.scatter([x], [y], s=120, color=node_color(z), zorder=2, ec="k", lw=0.5)
            ax.text(x, y, str(z), fontsize=6, ha="center", va="center", zorder=3)
            ax.text(x, y - 0.28, f"{tree.nodes[z].discriminability:.2f}", fontsize=5,
                    ha="center", va="top", color="#555555")
        ax.set_axis_off()
        ax.set_ylim(-depth - 0.6, 0.4)
        return save(fig, path)


def plot_coverage(spec, grid, path, title: str = ""):
    with style():
        fig, ax = plt.subplots(figsize=(5, 5))
        cw, ch = spec.width / grid.buckets, spec.height / grid.buckets
        for i, j in np.argwhere(grid.hits):
            ax.add_patch(Rectangle((i * cw, j * ch), cw, ch, fc="#9ecae1", ec="white", lw=0.3))
        draw_maze(ax, spec)
        ax.set_title(title or f"{grid.count} / {grid.buckets ** 2} buckets")
        return save(fig, path)


def plot_goals(spec, results, path, title: str = ""):
    """Goals coloured by their downstream value."""
    with style():
        fig, ax = plt.subplots(figsize=(5.6, 5))
        draw_maze(ax, spec)
        if results:
            g = np.array([r.goal for r in results])
            v = np.array([r.value for r in results])
            sc = ax.scatter(g[:, 0], g[:, 1], c=v, cmap="viridis", vmin=0, vmax=1, s=25,
                            ec="k", lw=0.3, zorder=4)
            fig.colorbar(sc, ax=ax, fraction=0.046, pad=0.02, label=r"$\gamma^\tau$")
        ax.set_title(title)
        return save(fig, path)


def plot_goal_tasks(spec, tasks, path):
    with style():
        fig, ax = plt.subplots(figsize=(5, 5))
        draw_maze(ax, spec)
        for t in tasks:
            ax.scatter([t.goal[0]], [t.goal[1]], s=14, color=node_color(max(t.bucket, 0)), zorder=4)
        ax.set_title(f"{len(tasks)} goals")
        return save(fig, path)


def plot_run_curve(events, path, title: str = ""):
    """Coverage and policy count over environment interactions."""
    rows = [e for e in events if e.get("event") == "coverage"]
    with style():
        fig, ax = plt.subplots(figsize=(5, 3))
        if rows:
            steps = [int(e["step"]) for e in rows]
            ax.plot(steps, [float(e["coverage"]) for e in rows], color=node_color(1), label="buckets")
            ax.plot(steps, [int(e["n"]) for e in rows], color=node_color(2), label="tree size")
            ax.legend()
        ax.set_xlabel("environment interactions")
        ax.set_title(title)
        return save(fig, path)
