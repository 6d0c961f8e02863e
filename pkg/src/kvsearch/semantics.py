"""Semantic grouping of candidate steps.

The last step of each candidate trajectory is embedded, and embeddings are
merged by average-linkage agglomerative clustering on cosine distance.  The
dendrogram is cut at a fixed distance threshold: merges happen only while
the smallest cluster-pair linkage distance is strictly below the threshold.
Equal-distance ties merge the pair whose (smallest-member, smallest-member)
index pair is lexicographically smallest, so the result is deterministic
and invariant to input order up to relabeling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BackendError


class Embedding:
    """A fixed-dimension real vector; zero vectors are rejected."""

    __slots__ = ("vector", "norm")

    def __init__(self, vector):
        v = np.asarray(vector, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("embedding vector must be 1-d")
        norm = float(np.linalg.norm(v))
        if norm == 0.0 or not np.isfinite(norm):
            raise ValueError("embedding vector must be nonzero and finite")
        self.vector = v
        self.norm = norm

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    def __repr__(self) -> str:
        return f"Embedding(dim={self.dim}, norm={self.norm:.4g})"


@dataclass(frozen=True)
class ClusterAssignment:
    """Dense cluster index per leaf id."""

    leaf_to_cluster: dict
    k: int

    def members(self, cluster: int) -> list[int]:
        return sorted(i for i, c in self.leaf_to_cluster.items() if c == cluster)

    def cluster_of(self, leaf_id: int) -> int:
        return self.leaf_to_cluster[leaf_id]


def cosine_distance(u: Embedding, v: Embedding) -> float:
    """1 - cos(u, v), in [0, 2]."""
    if u.dim != v.dim:
        raise ValueError(f"dimension mismatch: {u.dim} vs {v.dim}")
    cos = float(np.dot(u.vector, v.vector)) / (u.norm * v.norm)
    return min(2.0, max(0.0, 1.0 - cos))


def _pairwise_cosine_distance(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1)
    sims = (vectors @ vectors.T) / np.outer(norms, norms)
    d = 1.0 - sims
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, 2.0)


def agglomerative_cluster(embeddings, threshold: float, leaf_ids=None) -> ClusterAssignment:
    """Average-linkage clustering on cosine distance, cut at ``threshold``.

    ``leaf_ids`` names the inputs in the returned assignment; positions are
    used when omitted.  Cluster indices are dense, ordered by each cluster's
    smallest input position.
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    n = len(embeddings)
    if n == 0:
        raise ValueError("need at least one embedding")
    if leaf_ids is None:
        leaf_ids = list(range(n))
    elif len(leaf_ids) != n:
        raise ValueError("leaf_ids length must match embeddings")
    dims = {e.dim for e in embeddings}
    if len(dims) > 1:
        raise ValueError(f"mixed embedding dimensions: {sorted(dims)}")

    # cluster slot = smallest original member index; merging a<b keeps slot a
    vectors = np.stack([e.vector for e in embeddings])
    dist = _pairwise_cosine_distance(vectors)
    sizes = np.ones(n)
    active = np.ones(n, dtype=bool)
    member_of = np.arange(n)  # point -> slot

    while active.sum() > 1:
        idx = np.flatnonzero(active)
        sub = dist[np.ix_(idx, idx)]
        iu = np.triu_indices(len(idx), k=1)
        if iu[0].size == 0:
            break
        vals = sub[iu]
        m = vals.min()
        if m >= threshold:
            break
        ties = np.flatnonzero(vals == m)
        # rows of iu are sorted by (i, j); the first tie is the lexicographic min
        t = ties[0]
        a, b = int(idx[iu[0][t]]), int(idx[iu[1][t]])
        sa, sb = sizes[a], sizes[b]
        merged = (sa * dist[a, :] + sb * dist[b, :]) / (sa + sb)
        dist[a, :] = merged
        dist[:, a] = merged
        dist[a, a] = 0.0
        sizes[a] = sa + sb
        active[b] = False
        member_of[member_of == b] = a

    reps = sorted(set(member_of.tolist()))
    rep_to_cluster = {rep: c for c, rep in enumerate(reps)}
    assignment = {leaf_ids[i]: rep_to_cluster[int(member_of[i])] for i in range(n)}
    return ClusterAssignment(leaf_to_cluster=assignment, k=len(reps))


def embed_last_steps(leaves, provider):
    """Embed the final step of each candidate in one batched provider call.

    ``leaves`` is [(id, step text), ...].  A failed provider call is retried
    once; a second failure propagates to abort the run.
    """
    if not leaves:
        return []
    texts = [text for _, text in leaves]
    try:
        vectors = provider.embed(texts)
    except BackendError:
        vectors = provider.embed(texts)
    if len(vectors) != len(leaves):
        raise BackendError(
            f"provider returned {len(vectors)} embeddings for {len(leaves)} texts"
        )
    return [(leaf_id, emb) for (leaf_id, _), emb in zip(leaves, vectors)]
