"""Verifier-guided tree search with KV-cache-aware pruning."""

from .engine import (
    Problem,
    ProblemResult,
    SearchConfig,
    SimSearchProblem,
    aggregate,
    run_problem,
    run_suite,
)
from .metrics import SearchMetrics, kv_reduction, overhead_fraction
from .policies import PolicyConfig, beam_select, dvts_select, ets_select, rebase_select
from .pruner import LeafSpec, PruneDecision, PruneInstance, brute_force, objective, solve
from .rebase import WeightAllocation, allocate, reallocate
from .semantics import ClusterAssignment, Embedding, agglomerative_cluster, cosine_distance
from .simenv import SimConfig, SimProblem
from .tree import Node, SearchTree

__all__ = [
    "Problem",
    "ProblemResult",
    "SearchConfig",
    "SimSearchProblem",
    "aggregate",
    "run_problem",
    "run_suite",
    "SearchMetrics",
    "kv_reduction",
    "overhead_fraction",
    "PolicyConfig",
    "beam_select",
    "dvts_select",
    "ets_select",
    "rebase_select",
    "LeafSpec",
    "PruneDecision",
    "PruneInstance",
    "brute_force",
    "objective",
    "solve",
    "WeightAllocation",
    "allocate",
    "reallocate",
    "ClusterAssignment",
    "Embedding",
    "agglomerative_cluster",
    "cosine_distance",
    "SimConfig",
    "SimProblem",
    "Node",
    "SearchTree",
]

__version__ = "0.1.0"
