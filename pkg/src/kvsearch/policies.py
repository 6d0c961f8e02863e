"""Per-step expansion selection: beam search, subtree-split beam (DVTS),
reward-balanced sampling, and the KV-aware pruning pipeline.

Each policy maps the scored frontier to a WeightAllocation over the current
width.  Leaves allocated zero weight are dead for the rest of the search
and get pruned by the engine, so their tokens stop counting against the KV
footprint.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

from . import rebase
from .pruner import LeafSpec, PruneDecision, PruneInstance, solve
from .rebase import WeightAllocation
from .semantics import agglomerative_cluster, embed_last_steps
from .tree import SearchTree

METHODS = ("beam", "dvts", "rebase", "ets")


@dataclass
class PolicyConfig:
    method: str = "rebase"
    width: int = 16
    keep_k: int | str = 4  # beam/dvts; "sqrt" resolves to round(sqrt(width))
    rebase_temperature: float = 0.2
    lambda_b: float = 1.0
    lambda_d: float = 1.0
    cluster_threshold: float = 0.3
    sampling_temperature: float = 1.0
    solve_time_budget: float = 0.25
    cluster_mode: str = "any"

    def resolved_keep_k(self) -> int:
        if self.keep_k == "sqrt":
            return max(1, round(math.sqrt(self.width)))
        return int(self.keep_k)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if self.keep_k != "sqrt" and (
            not isinstance(self.keep_k, int) or self.keep_k < 1
        ):
            raise ValueError("keep_k must be a positive integer or 'sqrt'")
        if self.resolved_keep_k() > self.width:
            raise ValueError("keep_k cannot exceed width")
        if self.rebase_temperature <= 0 or self.sampling_temperature <= 0:
            raise ValueError("temperatures must be > 0")
        if self.lambda_b < 0 or self.lambda_d < 0:
            raise ValueError("lambda_b and lambda_d must be >= 0")
        if self.cluster_threshold <= 0:
            raise ValueError("cluster_threshold must be > 0")
        if self.cluster_mode not in ("any", "all"):
            raise ValueError("cluster_mode must be 'any' or 'all'")
        if self.solve_time_budget <= 0:
            raise ValueError("solve_time_budget must be > 0")


def beam_select(leaves, cfg: PolicyConfig, width: int) -> WeightAllocation:
    """Top keep_k leaves by reward split the width; the rest are dropped."""
    if not leaves:
        raise ValueError("beam_select needs at least one leaf")
    keep = min(cfg.resolved_keep_k(), len(leaves))
    ranked = sorted(leaves, key=lambda lr: (-lr[1], lr[0]))
    base, rem = divmod(width, keep)
    entries = []
    for pos, (leaf_id, _) in enumerate(ranked):
        if pos < keep:
            w = base + (1 if pos < rem else 0)
        else:
            w = 0
        entries.append((leaf_id, w))
    return WeightAllocation(tuple(entries), budget=width, temperature=cfg.rebase_temperature)


def dvts_select(leaves_by_subtree, subtree_widths, cfg: PolicyConfig) -> WeightAllocation:
    """Independent keep-1 beam within each subtree.

    ``leaves_by_subtree`` maps subtree index -> [(leaf id, reward), ...];
    ``subtree_widths`` carries each subtree's remaining width.  Budget from
    subtrees whose trajectories all completed or vanished is split evenly
    over the surviving subtrees, remainder to the lowest subtree index.
    """
    if not leaves_by_subtree:
        raise ValueError("dvts_select needs at least one subtree")
    unknown = set(leaves_by_subtree) - set(subtree_widths)
    if unknown:
        raise ValueError(f"subtrees without width tags: {sorted(unknown)}")

    live = sorted(
        s for s, ls in leaves_by_subtree.items() if ls and subtree_widths[s] > 0
    )
    if not live:
        raise ValueError("no subtree has both active leaves and budget")
    orphan = sum(
        w
        for s, w in subtree_widths.items()
        if w > 0 and not leaves_by_subtree.get(s)
    )
    base, rem = divmod(orphan, len(live))
    budgets = {s: subtree_widths[s] + base + (1 if j < rem else 0) for j, s in enumerate(live)}

    entries = []
    for s in sorted(leaves_by_subtree):
        group = leaves_by_subtree[s]
        if not group:
            continue
        best_id = min(group, key=lambda lr: (-lr[1], lr[0]))[0]
        for leaf_id, _ in sorted(group):
            entries.append((leaf_id, budgets.get(s, 0) if leaf_id == best_id else 0))
    total = sum(w for _, w in entries)
    return WeightAllocation(tuple(entries), budget=total, temperature=cfg.rebase_temperature)


def rebase_select(leaves, cfg: PolicyConfig, width: int) -> WeightAllocation:
    return rebase.allocate(leaves, width, cfg.rebase_temperature)


def ets_select(
    tree: SearchTree,
    leaves,
    cfg: PolicyConfig,
    embed_provider,
    width: int,
    metrics=None,
) -> tuple[PruneDecision, WeightAllocation]:
    """Allocate, prune for KV sharing and coverage, then reallocate.

    ``leaves`` is [(id, reward, last step text), ...].  The tree is pruned
    in place to the solver's retained set.  Reallocation is skipped when
    pruning removed only zero-weight leaves: the surviving allocation
    already spends the whole budget on exactly the retained set.
    """
    if not leaves:
        raise ValueError("ets_select needs at least one leaf")
    scored = [(i, r) for i, r, _ in leaves]
    alloc = rebase.allocate(scored, width, cfg.rebase_temperature)
    weights = alloc.as_dict()

    t0 = time.perf_counter()
    embedded = embed_last_steps([(i, text) for i, _, text in leaves], embed_provider)
    t1 = time.perf_counter()
    clusters = agglomerative_cluster(
        [e for _, e in embedded],
        cfg.cluster_threshold,
        leaf_ids=[i for i, _ in embedded],
    )
    t2 = time.perf_counter()
    if metrics is not None:
        metrics.embed_time += t1 - t0
        metrics.embed_calls += 1
        metrics.cluster_time += t2 - t1

    specs = []
    internal: set[int] = set()
    for leaf_id, _, _ in leaves:
        path = tuple(tree.path_ids(leaf_id)[:-1])
        internal.update(path)
        specs.append(LeafSpec(leaf_id, float(weights[leaf_id]), path))
    instance = PruneInstance(
        leaves=specs,
        internal_nodes=sorted(internal),
        clusters=clusters,
        lambda_b=cfg.lambda_b,
        lambda_d=cfg.lambda_d,
    )
    decision = solve(instance, cfg.solve_time_budget, cfg.cluster_mode)
    if metrics is not None:
        metrics.solver_time += decision.solve_time
        if not decision.optimal:
            metrics.solves_nonoptimal += 1

    retained = set(decision.retained_leaves)
    tree.prune_to(retained)

    if retained == set(alloc.positive_ids()):
        final = WeightAllocation(
            entries=tuple((i, w) for i, w in alloc.entries if i in retained),
            budget=width,
            temperature=cfg.rebase_temperature,
        )
    else:
        rewards = dict(scored)
        final = rebase.reallocate(
            [(i, rewards[i]) for i in sorted(retained)], width, cfg.rebase_temperature
        )
    return decision, final
