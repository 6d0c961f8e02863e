"""Exact subset selection trading retained weight against tree size and
semantic coverage.

At each search step the candidate leaves, their root paths, continuation
weights, and semantic clusters define an integer program: pick a nonempty
leaf subset S maximizing

    sum(W_i for i in S) / sum(W)          (retained weight)
  - lambda_b * |nodes(S)| / (P + L)       (tree-size penalty)
  + lambda_d * |clusters(S)| / K          (coverage bonus)

where nodes(S) is the path closure of S (retained leaves plus every
ancestor of a retained leaf) and clusters(S) counts clusters with at least
one retained leaf.  Ancestor and cluster indicators are fully determined by
the leaf choices, so the solver searches only over leaves.  Leaves with the
same parent path, weight, and cluster are interchangeable; they collapse
into one group branched on the count taken (lowest ids first), which both
shrinks the search space and bakes in the lexicographic tie-break.  Ties
resolve toward fewer retained nodes, then the smallest leaf-id set.

The budget is enforced in search nodes rather than wall time (converted at
a fixed rate), so a budget-limited result is still deterministic.

``cluster_mode="all"`` switches the coverage indicator to require every
member of a cluster (the stricter variant); the default ``"any"`` follows
the intended any-member semantics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .errors import ConstraintViolationError
from .semantics import ClusterAssignment

# search nodes charged against one second of budget
_NODES_PER_SECOND = 400_000
_BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class LeafSpec:
    id: int
    weight: float
    path: tuple[int, ...]  # internal-node ids, root first, parent last


@dataclass
class PruneInstance:
    leaves: list[LeafSpec]
    internal_nodes: list[int]
    clusters: ClusterAssignment
    lambda_b: float
    lambda_d: float

    def __post_init__(self):
        if not self.leaves:
            raise ValueError("instance needs at least one leaf")
        if self.lambda_b < 0 or self.lambda_d < 0:
            raise ValueError("lambda_b and lambda_d must be >= 0")
        internal = set(self.internal_nodes)
        on_paths = set()
        for leaf in self.leaves:
            if leaf.weight < 0:
                raise ValueError(f"negative weight on leaf {leaf.id}")
            if not set(leaf.path) <= internal:
                raise ValueError(f"leaf {leaf.id} path leaves internal_nodes")
            if leaf.id not in self.clusters.leaf_to_cluster:
                raise ValueError(f"leaf {leaf.id} missing from cluster assignment")
            on_paths.update(leaf.path)
        if on_paths != internal:
            raise ValueError("internal nodes must all appear on some leaf path")

    @property
    def weight_total(self) -> float:
        return sum(l.weight for l in self.leaves)

    @property
    def leaf_count(self) -> int:
        return len(self.leaves)

    @property
    def internal_count(self) -> int:
        return len(self.internal_nodes)

    def to_dict(self) -> dict:
        return {
            "leaves": [
                {"id": l.id, "weight": l.weight, "path": list(l.path)} for l in self.leaves
            ],
            "internal_nodes": list(self.internal_nodes),
            "clusters": {str(i): c for i, c in self.clusters.leaf_to_cluster.items()},
            "k": self.clusters.k,
            "lambda_b": self.lambda_b,
            "lambda_d": self.lambda_d,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PruneInstance":
        clusters = ClusterAssignment(
            leaf_to_cluster={int(i): c for i, c in d["clusters"].items()}, k=d["k"]
        )
        leaves = [
            LeafSpec(id=l["id"], weight=l["weight"], path=tuple(l["path"]))
            for l in d["leaves"]
        ]
        return cls(
            leaves=leaves,
            internal_nodes=list(d["internal_nodes"]),
            clusters=clusters,
            lambda_b=d["lambda_b"],
            lambda_d=d["lambda_d"],
        )


@dataclass(frozen=True)
class PruneDecision:
    retained_leaves: tuple[int, ...]
    objective_value: float
    optimal: bool
    nodes_retained: int
    clusters_covered: int
    solve_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "retained_leaves": list(self.retained_leaves),
            "objective_value": self.objective_value,
            "optimal": self.optimal,
            "nodes_retained": self.nodes_retained,
            "clusters_covered": self.clusters_covered,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PruneDecision":
        return cls(
            retained_leaves=tuple(d["retained_leaves"]),
            objective_value=d["objective_value"],
            optimal=d["optimal"],
            nodes_retained=d["nodes_retained"],
            clusters_covered=d["clusters_covered"],
        )


def _covered_clusters(instance: PruneInstance, subset, cluster_mode: str) -> int:
    assign = instance.clusters.leaf_to_cluster
    if cluster_mode == "any":
        return len({assign[i] for i in subset})
    if cluster_mode == "all":
        sizes: dict[int, int] = {}
        for c in assign.values():
            sizes[c] = sizes.get(c, 0) + 1
        taken: dict[int, int] = {}
        for i in subset:
            c = assign[i]
            taken[c] = taken.get(c, 0) + 1
        return sum(1 for c, t in taken.items() if t == sizes[c])
    raise ValueError(f"unknown cluster_mode {cluster_mode!r}")


def objective(instance: PruneInstance, subset, cluster_mode: str = "any") -> float:
    """Canonical objective value of a leaf subset.

    Both the solver and the exhaustive oracle route final values through
    this function, so equal subsets always compare bit-identically.
    """
    subset = set(subset)
    if not subset:
        raise ConstraintViolationError("subset must be nonempty")
    ids = {l.id for l in instance.leaves}
    if not subset <= ids:
        raise ValueError(f"subset contains unknown leaf ids: {sorted(subset - ids)}")

    total = instance.weight_total
    wsum = sum(l.weight for l in instance.leaves if l.id in subset)
    weight_term = (wsum / total) if total > 0 else 0.0

    closure: set[int] = set()
    for l in instance.leaves:
        if l.id in subset:
            closure.update(l.path)
    n_nodes = len(subset) + len(closure)
    denom = instance.internal_count + instance.leaf_count

    cov = _covered_clusters(instance, subset, cluster_mode)
    return (
        weight_term
        - instance.lambda_b * n_nodes / denom
        + instance.lambda_d * cov / instance.clusters.k
    )


def retained_node_count(instance: PruneInstance, subset) -> int:
    closure: set[int] = set()
    subset = set(subset)
    for l in instance.leaves:
        if l.id in subset:
            closure.update(l.path)
    return len(subset) + len(closure)


def _candidate_key(instance, subset, cluster_mode):
    obj = objective(instance, subset, cluster_mode)
    nodes = retained_node_count(instance, subset)
    return obj, nodes, tuple(sorted(subset))


def _beats(cand, incumbent) -> bool:
    cobj, cnodes, cids = cand
    iobj, inodes, iids = incumbent
    if cobj != iobj:
        return cobj > iobj
    if cnodes != inodes:
        return cnodes < inodes
    return cids < iids


def brute_force(instance: PruneInstance, cluster_mode: str = "any") -> PruneDecision:
    """Exhaustive maximum over all nonempty leaf subsets (testing oracle)."""
    L = instance.leaf_count
    if L > 20:
        raise ValueError(f"brute force refused for L={L} > 20 leaves")
    t0 = time.monotonic()
    ids = [l.id for l in instance.leaves]
    best = None
    for mask in range(1, 1 << L):
        subset = [ids[i] for i in range(L) if mask & (1 << i)]
        cand = _candidate_key(instance, subset, cluster_mode)
        if best is None or _beats(cand, best):
            best = cand
    obj, nodes, ids_t = best
    return PruneDecision(
        retained_leaves=ids_t,
        objective_value=obj,
        optimal=True,
        nodes_retained=nodes,
        clusters_covered=_covered_clusters(instance, ids_t, cluster_mode),
        solve_time=time.monotonic() - t0,
    )


class _Group:
    """A bundle of leaves branched on as one decision.

    Plain groups hold interchangeable leaves: same root path, weight, and
    cluster, so only the count taken matters and the lowest ids are the
    canonical pick.  Presolve may also merge the positive-gain groups that
    share one path into an all-or-nothing bundle: once the shared path is
    paid, each such sibling strictly improves any solution, so no optimum
    ever splits them.
    """

    __slots__ = (
        "weight",
        "path",
        "clusters",
        "ids",
        "size",
        "member_gain",
        "gain_total",
        "wfrac_total",
        "member_wfrac",
        "is_bundle",
    )

    def __init__(self, weight, path, cluster, ids):
        self.weight = weight
        self.path = path
        self.clusters = (cluster,)
        self.ids = ids  # ascending; count-t selections take the first t
        self.size = len(ids)
        self.member_gain = 0.0
        self.gain_total = 0.0
        self.wfrac_total = 0.0
        self.member_wfrac = 0.0
        self.is_bundle = False


class _Search:
    """Depth-first branch and bound over leaf-group counts.

    A presolve pass fixes every group whose full take strictly improves any
    solution (positive per-member gain covering the group's still-unpaid
    path), drops groups that can only lose, and bundles co-pathed
    positive-gain groups; together these usually shrink the open decisions
    to a handful of marginal groups.
    """

    def __init__(self, instance: PruneInstance, cluster_mode: str, node_budget: int):
        self.inst = instance
        self.mode = cluster_mode
        self.node_budget = node_budget
        self.nodes_visited = 0
        self.timed_out = False

        total = instance.weight_total
        denom = instance.internal_count + instance.leaf_count
        self.k = instance.clusters.k
        self.lam_d = instance.lambda_d
        self.lam_b = instance.lambda_b
        self.node_cost = instance.lambda_b / denom
        self.cov_unit = instance.lambda_d / self.k

        assign = instance.clusters.leaf_to_cluster
        buckets: dict[tuple, list[int]] = {}
        for l in instance.leaves:
            buckets.setdefault((l.path, l.weight, assign[l.id]), []).append(l.id)
        all_groups = []
        for (path, weight, cluster), ids in buckets.items():
            g = _Group(weight, path, cluster, tuple(sorted(ids)))
            g.member_wfrac = (weight / total) if total > 0 else 0.0
            g.member_gain = g.member_wfrac - self.node_cost
            g.wfrac_total = g.size * g.member_wfrac
            g.gain_total = g.size * g.member_gain
            all_groups.append(g)
        all_groups.sort(key=lambda g: (-g.weight, g.ids[0]))

        self._presolve(all_groups)
        # coverage carriers first, then bundles and positive groups by
        # total value: deciding the big coverage bonuses early keeps the
        # completion bound honest in the rest of the search
        self.groups.sort(
            key=lambda g: (
                0 if g.weight == 0 else 1,
                -max(0.0, g.gain_total),
                g.ids[0],
            )
        )
        groups = self.groups
        self.n_groups = len(groups)

        # Two optimistic prices for a group's path, used side by side:
        # "private" charges only nodes no other open group touches (valid
        # as-is anywhere in the search), while "fractional" splits every
        # unpaid shared node across its sharers, which is tighter in regions
        # where little has been taken but needs refunds (the correction
        # term) once shared nodes actually get paid.
        touch: dict[int, int] = {}
        for g in groups:
            for nid in g.path:
                touch[nid] = touch.get(nid, 0) + 1
        self.touch = touch
        fcost = []
        pcost = []
        for g in groups:
            unpaid = [nid for nid in g.path if nid not in self.base_closure]
            fcost.append(sum(1.0 / touch[nid] for nid in unpaid))
            pcost.append(float(sum(1 for nid in unpaid if touch[nid] == 1)))

        def suffix_of(costs):
            vals = [
                max(0.0, g.gain_total - self.node_cost * costs[gi])
                for gi, g in enumerate(groups)
            ]
            out = [0.0] * (self.n_groups + 1)
            for i in range(self.n_groups - 1, -1, -1):
                out[i] = out[i + 1] + vals[i]
            return out

        self.suffix_frac = suffix_of(fcost)
        self.suffix_priv = suffix_of(pcost)

        # per-cluster group lists (branching order) for the coverage bonus
        self.cluster_groups: list[list[int]] = [[] for _ in range(self.k)]
        for gi, g in enumerate(groups):
            for c in g.clusters:
                self.cluster_groups[c].append(gi)
        self.cluster_sizes = [0] * self.k
        for g in all_groups:
            for c in g.clusters:
                self.cluster_sizes[c] += g.size
        if cluster_mode == "any":
            # value of covering the cluster through each group; a bundle
            # spans several clusters, so charging its deficit once per
            # cluster would double-count and break the bound's validity:
            # its coverage counts as free here instead
            def carrier_stat(gi, g):
                if g.is_bundle:
                    return 0.0
                net = g.gain_total if g.gain_total > 0 else g.member_gain
                return net - self.node_cost * pcost[gi]

            self.suffix_stat = [
                self._suffix_max([carrier_stat(gi, groups[gi]) for gi in gl])
                for gl in self.cluster_groups
            ]
        else:
            self.suffix_stat = [
                self._suffix_sum(
                    [
                        groups[gi].size * min(0.0, groups[gi].member_gain)
                        for gi in gl
                    ]
                )
                for gl in self.cluster_groups
            ]

        self.incumbent = None  # (objective, nodes, ids)

    def _presolve(self, all_groups: list[_Group]) -> None:
        base_ids: list[int] = []
        base_closure: set[int] = set()
        base_covered = [False] * self.k
        base_taken = [0] * self.k
        open_groups = list(all_groups)

        if self.mode == "any":
            open_groups = self._merge_families(open_groups)
            changed = True
            while changed:
                changed = False
                rest = []
                for g in open_groups:
                    positive = g.is_bundle or g.member_gain > 0
                    unpaid = sum(1 for nid in g.path if nid not in base_closure)
                    if positive and g.gain_total - self.node_cost * unpaid > 0:
                        base_ids.extend(g.ids)
                        base_closure.update(g.path)
                        for c in g.clusters:
                            base_covered[c] = True
                        changed = True
                    else:
                        rest.append(g)
                open_groups = rest

            if base_ids:
                # every optimum contains the base, so a group that can only
                # subtract value (or tie with more nodes) never appears
                kept = []
                for g in open_groups:
                    if g.is_bundle:
                        kept.append(g)
                        continue
                    cov_moot = self.lam_d == 0 or base_covered[g.clusters[0]]
                    if cov_moot and (
                        g.member_gain < 0
                        or (g.weight == 0 and g.member_gain == 0)
                    ):
                        continue
                    kept.append(g)
                open_groups = kept

        self.groups = open_groups
        self.base_ids = base_ids
        self.base_closure = base_closure
        self.base_covered = base_covered
        self.base_taken = base_taken

    def _merge_families(self, open_groups: list[_Group]) -> list[_Group]:
        by_path: dict[tuple, list[_Group]] = {}
        for g in open_groups:
            by_path.setdefault(g.path, []).append(g)
        out = []
        for path, members in by_path.items():
            positive = [g for g in members if g.member_gain > 0]
            out.extend(g for g in members if g.member_gain <= 0)
            if len(positive) < 2:
                out.extend(positive)
                continue
            ids = tuple(sorted(i for g in positive for i in g.ids))
            bundle = _Group(max(g.weight for g in positive), path, 0, ids)
            bundle.clusters = tuple(sorted({c for g in positive for c in g.clusters}))
            bundle.wfrac_total = sum(g.wfrac_total for g in positive)
            bundle.gain_total = sum(g.gain_total for g in positive)
            bundle.member_wfrac = 0.0
            bundle.member_gain = 0.0
            bundle.is_bundle = True
            out.append(bundle)
        return out

    @staticmethod
    def _suffix_max(vals):
        out = [float("-inf")] * (len(vals) + 1)
        for i in range(len(vals) - 1, -1, -1):
            out[i] = max(vals[i], out[i + 1])
        return out

    @staticmethod
    def _suffix_sum(vals):
        out = [0.0] * (len(vals) + 1)
        for i in range(len(vals) - 1, -1, -1):
            out[i] = vals[i] + out[i + 1]
        return out

    def _bonus(self, c: int) -> float:
        """Optimistic coverage value still available from cluster ``c``."""
        ptr = self.ptr[c]
        stats = self.suffix_stat[c]
        if ptr >= len(stats) - 1:
            return 0.0
        if self.mode == "any":
            if self.covered[c]:
                return 0.0
            return max(0.0, self.cov_unit + min(0.0, stats[ptr]))
        if self.dead[c] or self.cov_done[c]:
            return 0.0
        return max(0.0, self.cov_unit + stats[ptr])

    def offer(self, subset) -> None:
        if not subset:
            return
        cand = _candidate_key(self.inst, subset, self.mode)
        if self.incumbent is None or _beats(cand, self.incumbent):
            self.incumbent = cand

    def run(self) -> None:
        total = self.inst.weight_total
        base_weight = sum(
            l.weight for l in self.inst.leaves if l.id in set(self.base_ids)
        )
        self.retained: list[int] = list(self.base_ids)
        self.closure: set[int] = set(self.base_closure)
        self.wsum = (base_weight / total) if total > 0 else 0.0
        self.n_nodes = len(self.base_ids) + len(self.base_closure)
        self.covered = list(self.base_covered)
        self.ncov = sum(self.covered)
        self.ptr = [0] * self.k
        self.taken = list(self.base_taken)
        self.dead = [False] * self.k
        self.cov_done = [False] * self.k
        self.total_bonus = sum(self._bonus(c) for c in range(self.k))
        self.und_touch = dict(self.touch)
        self.correction = 0.0
        self._dfs(0)

    def _dfs(self, pos: int) -> None:
        self.nodes_visited += 1
        if self.nodes_visited > self.node_budget:
            self.timed_out = True
            return
        if pos == self.n_groups:
            self.offer(list(self.retained))
            return

        partial = self.wsum - self.node_cost * self.n_nodes + self.cov_unit * self.ncov
        rest = min(self.suffix_priv[pos], self.suffix_frac[pos] + self.correction)
        bound = partial + rest + self.total_bonus
        if self.incumbent is not None and bound < self.incumbent[0] - _BOUND_SLACK:
            return

        g = self.groups[pos]

        # deciding this group moves its clusters' suffix pointers and stops
        # refunding paid path nodes on its behalf
        old_bonus = sum(self._bonus(c) for c in g.clusters)
        for c in g.clusters:
            self.ptr[c] += 1
        refund = 0.0
        for nid in g.path:
            self.und_touch[nid] -= 1
            if nid in self.closure and nid not in self.base_closure:
                refund += self.node_cost / self.touch[nid]
        self.correction -= refund

        counts = self._candidate_counts(g)
        for t in counts:
            if self.timed_out:
                break
            self._take(g, t, old_bonus, pos)

        self.correction += refund
        for nid in g.path:
            self.und_touch[nid] += 1
        for c in g.clusters:
            self.ptr[c] -= 1

    def _candidate_counts(self, g: _Group):
        if self.mode == "all":
            # partial coverage makes per-member marginals non-monotone
            return range(g.size, -1, -1)
        if g.is_bundle:
            return (g.size, 0)
        if g.member_gain > 0:
            # every member beyond the first strictly gains, so any count in
            # between loses to taking the whole group
            return (g.size, 0)
        if g.weight > 0:
            # net-negative members can still pay off once, via coverage or
            # as the best single retained leaf
            return (1, 0)
        c = g.clusters[0]
        cluster_alive = self.lam_d > 0 and not self.covered[c]
        if cluster_alive or not self.retained:
            return (1, 0)
        return (0,)

    def _take(self, g: _Group, t: int, old_bonus: float, pos: int) -> None:
        added = ()
        covered_now: list[int] = []
        full_covered: list[int] = []
        dead_now: list[int] = []
        added_refund = 0.0
        if t > 0:
            added = [nid for nid in g.path if nid not in self.closure]
            self.closure.update(added)
            self.retained.extend(g.ids[:t])
            self.wsum += g.wfrac_total if t == g.size else t * g.member_wfrac
            self.n_nodes += t + len(added)
            # newly paid nodes refund their fraction to undecided sharers
            for nid in added:
                added_refund += self.node_cost * self.und_touch[nid] / self.touch[nid]
            self.correction += added_refund
            if self.mode == "any":
                for c in g.clusters:
                    if not self.covered[c]:
                        self.covered[c] = True
                        self.ncov += 1
                        covered_now.append(c)
            else:
                c = g.clusters[0]
                self.taken[c] += t
                if t < g.size and not self.dead[c]:
                    self.dead[c] = True
                    dead_now.append(c)
                if self.taken[c] == self.cluster_sizes[c] and not self.dead[c]:
                    self.cov_done[c] = True
                    self.ncov += 1
                    full_covered.append(c)
        else:
            if self.mode == "all":
                c = g.clusters[0]
                if not self.dead[c]:
                    self.dead[c] = True
                    dead_now.append(c)

        new_bonus = sum(self._bonus(c) for c in g.clusters)
        self.total_bonus += new_bonus - old_bonus

        self._dfs(pos + 1)

        self.total_bonus += old_bonus - new_bonus
        if t > 0:
            self.correction -= added_refund
            for c in covered_now:
                self.covered[c] = False
                self.ncov -= 1
            for c in full_covered:
                self.cov_done[c] = False
                self.ncov -= 1
            if self.mode == "all":
                self.taken[g.clusters[0]] -= t
            self.n_nodes -= t + len(added)
            self.wsum -= g.wfrac_total if t == g.size else t * g.member_wfrac
            del self.retained[-t:]
            self.closure.difference_update(added)
        for c in dead_now:
            self.dead[c] = False


def solve(
    instance: PruneInstance,
    time_budget: float = 0.25,
    cluster_mode: str = "any",
) -> PruneDecision:
    """Exact optimum over nonempty leaf subsets via branch and bound.

    Returns the best incumbent with ``optimal=False`` when the budget runs
    out first.  The budget is deterministic: it limits search nodes, scaled
    from ``time_budget`` seconds at a fixed rate.
    """
    if cluster_mode not in ("any", "all"):
        raise ValueError(f"unknown cluster_mode {cluster_mode!r}")
    if time_budget <= 0:
        raise ValueError("time_budget must be > 0")
    t0 = time.monotonic()
    node_budget = max(1024, int(time_budget * _NODES_PER_SECOND))
    search = _Search(instance, cluster_mode, node_budget)

    # warm starts, all scored canonically: full set, positive-weight set,
    # the fixed base, base plus cumulative open-group prefixes, and each
    # open group's first member (with the base when present)
    all_ids = [l.id for l in instance.leaves]
    search.offer(all_ids)
    positive = [l.id for l in instance.leaves if l.weight > 0]
    search.offer(positive)
    base = list(search.base_ids)
    search.offer(base)
    prefix = list(base)
    for g in search.groups:
        prefix.extend(g.ids)
        search.offer(list(prefix))
        search.offer(base + [g.ids[0]])

    search.run()

    obj, nodes, ids_t = search.incumbent
    return PruneDecision(
        retained_leaves=ids_t,
        objective_value=obj,
        optimal=not search.timed_out,
        nodes_retained=nodes,
        clusters_covered=_covered_clusters(instance, ids_t, cluster_mode),
        solve_time=time.monotonic() - t0,
    )
