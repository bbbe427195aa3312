"""Trained-model container and its ``.npz`` serialization."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import env as maze
from .algo import Plan, UpsideConfig
from .approx import Adam, Mlp
from .discrim import Discriminator, StateBuffer
from .rl import COMPASS, QFunction
from .tree import ROOT, PolicyNode, Tree

MODEL_VERSION = 1


@dataclass
class TrainedModel:
    """Everything evaluation needs from an unsupervised run."""

    spec: maze.MazeSpec
    cfg: UpsideConfig
    tree: Tree
    discr: Discriminator
    seed: int = 0
    snapshots: dict = field(default_factory=dict)   # node id -> discriminator at consolidation
    metrics: dict = field(default_factory=dict)

    @property
    def plan(self) -> Plan:
        return self.cfg.resolved()

    @classmethod
    def from_learner(cls, learner) -> "TrainedModel":
        return cls(learner.spec, learner.cfg, learner.tree, learner.discr, learner.seed,
                   dict(learner.snapshots), dict(learner.record.metrics))

    def policies(self) -> list[int]:
        """Consolidated policies that own a discriminator class."""
        return [z for z in self.tree.consolidated_ids() if z in self.discr]


def _put_net(arrays: dict, key: str, net: Mlp) -> dict:
    header, flat = net.to_flat()
    arrays[key] = flat
    return header


def _get_net(arrays, key: str, header: dict) -> Mlp:
    return Mlp.from_flat(header, arrays[key])


def save_model(model: TrainedModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    nodes = []
    for k in sorted(model.tree.nodes):
        nd = model.tree.nodes[k]
        entry = {"id": nd.id, "parent": nd.parent, "depth": nd.depth, "qhat": nd.discriminability,
                 "consolidated": nd.consolidated, "terminal": nd.terminal,
                 "children": list(nd.children), "train_steps": nd.train_steps}
        arrays[f"buffer_{k}"] = nd.buffer.states
        if nd.skill is not None:
            entry["skill"] = _put_net(arrays, f"skill_{k}", nd.skill.net)
            entry["target"] = _put_net(arrays, f"target_{k}", nd.skill.target)
        nodes.append(entry)
    # snapshots are shared between siblings consolidated together; store each once
    snap_ids: dict[int, int] = {}
    snaps = []
    snap_of = {}
    for z, d in sorted(model.snapshots.items()):
        if id(d) not in snap_ids:
            snap_ids[id(d)] = len(snaps)
            snaps.append({"classes": d.classes, "net": _put_net(arrays, f"snap_{len(snaps)}", d.net)})
        snap_of[str(z)] = snap_ids[id(d)]
    meta = {
        "version": MODEL_VERSION,
        "spec": model.spec.to_dict(),
        "cfg": asdict(model.cfg),
        "seed": model.seed,
        "nodes": nodes,
        "queue": list(model.tree.queue),
        "next_id": model.tree._next_id,
        "buffer_capacity": model.tree.buffer_capacity,
        "discr": {"classes": model.discr.classes, "net": _put_net(arrays, "discr", model.discr.net),
                  "lr": model.discr.opt.lr},
        "snapshots": snaps,
        "snapshot_of": snap_of,
        "metrics": model.metrics,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with path.open("wb") as fh:
        np.savez_compressed(fh, **arrays)
    return path


def _discriminator(classes, net: Mlp, bounds, lr=1e-3) -> Discriminator:
    d = Discriminator.__new__(Discriminator)
    d.classes = list(classes)
    d.bounds = np.asarray(bounds, dtype=float)
    d.hidden = tuple(net.sizes[1:-1])
    d.net = net
    d.opt = Adam(lr=lr)
    d._index = {z: k for k, z in enumerate(d.classes)}
    return d


def load_model(path) -> TrainedModel:
    with np.load(Path(path)) as arrays:
        meta = json.loads(arrays["meta"].tobytes().decode())
        if meta.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {meta.get('version')}")
        spec = maze.MazeSpec.from_dict(meta["spec"])
        cfg = UpsideConfig.from_dict(meta["cfg"])
        bounds = (spec.width, spec.height)
        tree = Tree(meta["buffer_capacity"])
        tree.nodes.clear()
        for e in meta["nodes"]:
            skill = None
            if "skill" in e:
                skill = QFunction(COMPASS, bounds, (cfg.hidden,) * 2, cfg.lr_pol, cfg.tau)
                skill.net = _get_net(arrays, f"skill_{e['id']}", e["skill"])
                skill.target = _get_net(arrays, f"target_{e['id']}", e["target"])
            buf = StateBuffer(e["id"], meta["buffer_capacity"])
            buf.extend(arrays[f"buffer_{e['id']}"])
            tree.nodes[e["id"]] = PolicyNode(e["id"], e["parent"], skill, buf, e["depth"], e["qhat"],
                                             e["consolidated"], e["terminal"], list(e["children"]),
                                             e["train_steps"])
        tree.queue = list(meta["queue"])
        tree._next_id = meta["next_id"]
        tree.check()
        dm = meta["discr"]
        discr = _discriminator(dm["classes"], _get_net(arrays, "discr", dm["net"]), bounds, dm["lr"])
        snaps = [_discriminator(s["classes"], _get_net(arrays, f"snap_{k}", s["net"]), bounds)
                 for k, s in enumerate(meta["snapshots"])]
        snapshots = {int(z): snaps[k] for z, k in meta["snapshot_of"].items()}
    if ROOT not in tree.nodes:
        raise ValueError("model has no root policy")
    return TrainedModel(spec, cfg, tree, discr, meta["seed"], snapshots, meta["metrics"])
