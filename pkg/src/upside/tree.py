"""The growing policy tree: edges are directed skills, nodes are diffusing parts."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .discrim import StateBuffer
from .rl import QFunction

ROOT = 0


class TreeError(ValueError):
    pass


@dataclass
class PolicyNode:
    id: int
    parent: int | None
    skill: QFunction | None
    buffer: StateBuffer
    depth: int = 0
    discriminability: float = 0.0
    consolidated: bool = False
    terminal: bool = False          # never expanded again (refused or ended with no children)
    children: list[int] = field(default_factory=list)
    train_steps: int = 0            # env steps of this node's own training rollouts


class Tree:
    def __init__(self, buffer_capacity: int):
        self.buffer_capacity = buffer_capacity
        root = PolicyNode(ROOT, None, None, StateBuffer(ROOT, buffer_capacity), depth=0,
                          discriminability=1.0, consolidated=True)
        self.nodes: dict[int, PolicyNode] = {ROOT: root}
        self.queue: list[int] = [ROOT]
        self._next_id = 1

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, z) -> bool:
        return z in self.nodes

    def node(self, z: int) -> PolicyNode:
        try:
            return self.nodes[z]
        except KeyError:
            raise TreeError(f"unknown policy id {z}") from None

    def path_to(self, z: int) -> list[int]:
        """Ancestor chain from the root's child down to ``z`` (root excluded)."""
        path = []
        node = self.node(z)
        while node.parent is not None:
            path.append(node.id)
            node = self.nodes[node.parent]
        return path[::-1]

    def episode_length(self, z: int, T: int, H: int) -> int:
        return self.node(z).depth * T + H

    def add_children(self, z: int, n: int, T: int, H: int, H_max: int,
                     make_skill: Callable[[], QFunction]) -> list[int]:
        """Attach ``n`` fresh nodes below ``z``.

        Refuses (returns ``[]`` and marks ``z`` terminal) when the children's episodes would
        exceed ``H_max``. The caller registers the new ids with its discriminator.
        """
        parent = self.node(z)
        if not (parent.consolidated or z == ROOT):
            raise TreeError(f"policy {z} is not consolidated")
        if n <= 0:
            return []
        if (parent.depth + 1) * T + H > H_max:
            parent.terminal = True
            return []
        ids = []
        for _ in range(n):
            cid = self._next_id
            self._next_id += 1
            self.nodes[cid] = PolicyNode(cid, z, make_skill(), StateBuffer(cid, self.buffer_capacity),
                                         depth=parent.depth + 1)
            parent.children.append(cid)
            ids.append(cid)
        return ids

    def remove_node(self, z: int) -> None:
        node = self.node(z)
        if z == ROOT or node.children or node.consolidated:
            raise TreeError(f"policy {z} is not a removable in-training leaf")
        self.nodes[node.parent].children.remove(z)
        del self.nodes[z]
        if z in self.queue:
            self.queue.remove(z)

    def enqueue(self, z: int) -> None:
        node = self.node(z)
        if not node.consolidated:
            raise TreeError(f"only consolidated policies can be queued (got {z})")
        if not node.terminal and z not in self.queue:
            self.queue.append(z)

    def next_to_expand(self) -> int | None:
        """Pop the queued policy with the highest cached discriminability (lowest id on ties)."""
        if not self.queue:
            return None
        best = min(self.queue, key=lambda k: (-self.nodes[k].discriminability, k))
        self.queue.remove(best)
        return best

    def consolidated_ids(self) -> list[int]:
        return sorted(k for k, nd in self.nodes.items() if nd.consolidated)

    def leaves(self) -> list[int]:
        return sorted(k for k, nd in self.nodes.items() if not nd.children)

    def check(self) -> None:
        """Raise if the structure is not a parent-connected tree rooted at ``ROOT``."""
        for k, nd in self.nodes.items():
            if k == ROOT:
                if nd.parent is not None or nd.depth != 0:
                    raise TreeError("malformed root")
                continue
            if nd.parent not in self.nodes:
                raise TreeError(f"policy {k} has a dangling parent")
            if nd.depth != self.nodes[nd.parent].depth + 1:
                raise TreeError(f"policy {k} has inconsistent depth")
            if k not in self.nodes[nd.parent].children:
                raise TreeError(f"policy {k} missing from its parent's children")
            seen = set()
            p = k
            while p is not None:
                if p in seen:
                    raise TreeError("cycle detected")
                seen.add(p)
                p = self.nodes[p].parent
        for k in self.queue:
            if not self.nodes[k].consolidated:
                raise TreeError("queue holds an unconsolidated policy")
