"""Independent reference implementations used as test oracles.

Everything here is deliberately naive and kept separate from the package
code paths it checks.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def naive_average_linkage(vectors, threshold):
    """O(n^3) agglomerative clustering: recompute every cluster-pair mean
    cosine distance from the raw pairwise matrix at each step.

    Returns a partition as a sorted tuple of sorted member-index tuples.
    """
    n = len(vectors)
    vecs = [np.asarray(v, dtype=np.float64) for v in vectors]
    base = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                cos = float(np.dot(vecs[i], vecs[j])) / (
                    np.linalg.norm(vecs[i]) * np.linalg.norm(vecs[j])
                )
                base[i, j] = min(2.0, max(0.0, 1.0 - cos))
    clusters = [[i] for i in range(n)]
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                d = float(
                    np.mean([base[i, j] for i in clusters[a] for j in clusters[b]])
                )
                key = (d, min(clusters[a]), min(clusters[b]))
                if best is None or key < best[0]:
                    best = (key, a, b)
        (d, _, _), a, b = best
        if d >= threshold:
            break
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
        clusters.sort(key=min)
    return tuple(sorted(tuple(sorted(c)) for c in clusters))


def rebase_reference(leaves, budget, temperature):
    """Direct transcription of the sequential ceil allocation, computing the
    softmax denominator from scratch at every step."""
    order = sorted(leaves, key=lambda lr: (-lr[1], lr[0]))
    out = {}
    remaining = budget
    pending = list(order)
    mx = max(r for _, r in order)
    while pending:
        leaf_id, r = pending.pop(0)
        denom = math.exp((r - mx) / temperature) + sum(
            math.exp((q - mx) / temperature) for _, q in pending
        )
        if remaining <= 0:
            out[leaf_id] = 0
            continue
        w = math.ceil(remaining * math.exp((r - mx) / temperature) / denom)
        w = min(w, remaining)
        out[leaf_id] = w
        remaining -= w
    return out


def enumerate_best_subset(leaves, internal_count, leaf_to_cluster, k,
                          lambda_b, lambda_d, cluster_mode="any"):
    """Exhaustive objective maximization, written independently of the
    package's brute_force: leaves is [(id, weight, path_tuple), ...]."""
    total = sum(w for _, w, _ in leaves)
    denom = internal_count + len(leaves)
    sizes = {}
    for c in leaf_to_cluster.values():
        sizes[c] = sizes.get(c, 0) + 1
    best = None
    for r in range(1, len(leaves) + 1):
        for combo in itertools.combinations(leaves, r):
            wsum = sum(w for _, w, _ in combo)
            closure = set()
            for _, _, path in combo:
                closure.update(path)
            nodes = len(combo) + len(closure)
            if cluster_mode == "any":
                cov = len({leaf_to_cluster[i] for i, _, _ in combo})
            else:
                taken = {}
                for i, _, _ in combo:
                    c = leaf_to_cluster[i]
                    taken[c] = taken.get(c, 0) + 1
                cov = sum(1 for c, t in taken.items() if t == sizes[c])
            obj = (
                (wsum / total if total > 0 else 0.0)
                - lambda_b * nodes / denom
                + lambda_d * cov / k
            )
            ids = tuple(sorted(i for i, _, _ in combo))
            if best is None:
                best = (ids, obj, nodes)
                continue
            _, bobj, bnodes = best
            wins = (
                obj > bobj
                or (obj == bobj and nodes < bnodes)
                or (obj == bobj and nodes == bnodes and ids < best[0])
            )
            if wins:
                best = (ids, obj, nodes)
    return best


def rand_index(labels_a, labels_b):
    """Rand index between two labelings of the same items."""
    n = len(labels_a)
    agree = 0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            pairs += 1
            same_a = labels_a[i] == labels_a[j]
            same_b = labels_b[i] == labels_b[j]
            if same_a == same_b:
                agree += 1
    return agree / pairs if pairs else 1.0
