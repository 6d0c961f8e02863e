"""Rooted search-tree state with token accounting.

Token counts stand in for KV-cache footprint: trajectories that share a
prefix share that prefix's nodes, so the live token total is the size of
the KV state a prefix-sharing serving system would hold for the tree.

The root holds the problem prompt and its token count; the prompt KV is
shared by every trajectory and counted once.  Completed leaves stay in the
tree (their answers feed final voting) but are frozen: they cannot be
expanded or pruned, and their step tokens leave the live total the moment
they complete, since their KV is released once scored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConstraintViolationError, InvalidNodeError

ACTIVE_LEAF = "active-leaf"
INTERNAL = "internal"
COMPLETED_LEAF = "completed-leaf"


@dataclass
class Node:
    id: int
    parent: int | None
    token_count: int
    text: str
    reward: float | None
    depth: int
    status: str
    children: list[int] = field(default_factory=list)

    def is_leaf(self) -> bool:
        return self.status in (ACTIVE_LEAF, COMPLETED_LEAF)


class SearchTree:
    """Id-indexed rooted tree; single-writer, ids never reused.

    Node ids are monotonically assigned integers, so any "deterministic id
    order" below is also insertion order.
    """

    def __init__(self, prompt_text: str = "", prompt_tokens: int = 0):
        if prompt_tokens < 0:
            raise ValueError("prompt_tokens must be >= 0")
        self._next_id = 0
        root = Node(
            id=self._alloc_id(),
            parent=None,
            token_count=prompt_tokens,
            text=prompt_text,
            reward=None,
            depth=0,
            status=INTERNAL,
        )
        self.root = root.id
        self.nodes: dict[int, Node] = {root.id: root}
        self._live_tokens = prompt_tokens

    def _alloc_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def node(self, node_id: int) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise InvalidNodeError(f"unknown or pruned node id {node_id}") from None

    def add_child(self, parent: int, text: str, token_count: int, reward: float) -> int:
        """Append a new active leaf under ``parent`` and return its id."""
        pnode = self.node(parent)
        if pnode.status == COMPLETED_LEAF:
            raise InvalidNodeError(f"node {parent} is a completed leaf and frozen")
        if token_count < 0:
            raise ValueError("token_count must be >= 0")
        if not 0.0 <= reward <= 1.0:
            raise ValueError(f"reward must be in [0, 1], got {reward}")
        child = Node(
            id=self._alloc_id(),
            parent=parent,
            token_count=token_count,
            text=text,
            reward=reward,
            depth=pnode.depth + 1,
            status=ACTIVE_LEAF,
        )
        pnode.children.append(child.id)
        if pnode.status == ACTIVE_LEAF:
            pnode.status = INTERNAL
        self.nodes[child.id] = child
        self._live_tokens += token_count
        return child.id

    def active_leaves(self) -> list[int]:
        return sorted(n.id for n in self.nodes.values() if n.status == ACTIVE_LEAF)

    def completed_leaves(self) -> list[int]:
        return sorted(n.id for n in self.nodes.values() if n.status == COMPLETED_LEAF)

    def descendant_leaves(self, node_id: int) -> list[int]:
        """All active/completed leaves in the subtree rooted at ``node_id``."""
        start = self.node(node_id)
        if start.is_leaf():
            return [start.id]
        out = []
        stack = list(start.children)
        while stack:
            n = self.nodes[stack.pop()]
            if n.is_leaf():
                out.append(n.id)
            else:
                stack.extend(n.children)
        return sorted(out)

    def mark_completed(self, leaf_id: int) -> None:
        """Freeze an active leaf; its step tokens leave the live total."""
        n = self.node(leaf_id)
        if n.status != ACTIVE_LEAF:
            raise InvalidNodeError(f"node {leaf_id} is not an active leaf")
        n.status = COMPLETED_LEAF
        self._live_tokens -= n.token_count

    def path_ids(self, node_id: int) -> list[int]:
        """Ids on the root-to-node path, root first, node last."""
        n = self.node(node_id)
        path = [n.id]
        while n.parent is not None:
            n = self.nodes[n.parent]
            path.append(n.id)
        path.reverse()
        return path

    def step_texts(self, node_id: int) -> list[str]:
        """Step strings root-to-node, excluding the root prompt."""
        return [self.nodes[i].text for i in self.path_ids(node_id)[1:]]

    def prune_to(self, retained_leaves) -> int:
        """Keep exactly the paths to ``retained_leaves`` plus all completed
        leaves' paths; return the number of removed nodes."""
        retained = set(retained_leaves)
        if not retained:
            raise ConstraintViolationError("must retain at least one leaf")
        for lid in retained:
            if self.node(lid).status != ACTIVE_LEAF:
                raise InvalidNodeError(f"node {lid} is not an active leaf")
        keep: set[int] = set()
        for lid in list(retained) + self.completed_leaves():
            keep.update(self.path_ids(lid))
        removed = [nid for nid in self.nodes if nid not in keep]
        for nid in removed:
            n = self.nodes.pop(nid)
            if n.status != COMPLETED_LEAF:
                self._live_tokens -= n.token_count
        for nid in keep:
            n = self.nodes[nid]
            n.children = [c for c in n.children if c in keep]
        return len(removed)

    def live_token_total(self, include_prompt: bool = True) -> int:
        """Sum of token counts over live nodes (completed leaves excluded)."""
        total = self._live_tokens
        if not include_prompt:
            total -= self.nodes[self.root].token_count
        return total

    def recompute_token_total(self, include_prompt: bool = True) -> int:
        """From-scratch recomputation; must equal the incremental counter."""
        total = 0
        for n in self.nodes.values():
            if n.status == COMPLETED_LEAF:
                continue
            if n.id == self.root and not include_prompt:
                continue
            total += n.token_count
        return total

    def snapshot(self, with_text: bool = False) -> dict:
        nodes = []
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            rec = {
                "id": n.id,
                "parent": n.parent,
                "tokens": n.token_count,
                "reward": n.reward,
                "status": n.status,
                "depth": n.depth,
            }
            if with_text:
                rec["text"] = n.text
            nodes.append(rec)
        return {"root": self.root, "nodes": nodes}

    def to_json(self, with_text: bool = False) -> str:
        return json.dumps(self.snapshot(with_text=with_text), sort_keys=True)

    @classmethod
    def from_snapshot(cls, snap: dict) -> "SearchTree":
        tree = cls.__new__(cls)
        tree.root = snap["root"]
        tree.nodes = {}
        tree._live_tokens = 0
        max_id = 0
        for rec in snap["nodes"]:
            node = Node(
                id=rec["id"],
                parent=rec["parent"],
                token_count=rec["tokens"],
                text=rec.get("text", ""),
                reward=rec["reward"],
                depth=rec["depth"],
                status=rec["status"],
            )
            tree.nodes[node.id] = node
            max_id = max(max_id, node.id)
            if node.status != COMPLETED_LEAF:
                tree._live_tokens += node.token_count
        for node in tree.nodes.values():
            if node.parent is not None:
                tree.nodes[node.parent].children.append(node.id)
        for node in tree.nodes.values():
            node.children.sort()
        tree._next_id = max_id + 1
        return tree
