"""Efficiency accounting for one search run.

KV footprint is sampled once per expansion round: after pruning and
expansion the live token total of the tree is appended, and the cumulative
KV size (the efficiency proxy) is the sum of those samples.  Generated
tokens stand in for FLOPs.  Reward and embedding models are tracked by
call count only; wall-clock timings feed the overhead fraction but stay
out of deterministic outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class SearchMetrics:
    per_step_kv_tokens: list[int] = field(default_factory=list)
    cumulative_kv_tokens: int = 0
    generated_tokens: int = 0
    model_calls: int = 0
    reward_calls: int = 0
    embed_calls: int = 0
    solver_time: float = 0.0
    cluster_time: float = 0.0
    generation_time: float = 0.0
    embed_time: float = 0.0
    solves_nonoptimal: int = 0

    def record_step(self, tree, new_tokens: int, calls: int, include_prompt: bool = True):
        """Sample the live KV state after one prune+expand round."""
        kv = tree.live_token_total(include_prompt=include_prompt)
        self.per_step_kv_tokens.append(kv)
        self.cumulative_kv_tokens += kv
        self.generated_tokens += new_tokens
        self.model_calls += calls
        return self

    def to_dict(self, include_timings: bool = False) -> dict:
        d = {
            "per_step_kv_tokens": list(self.per_step_kv_tokens),
            "cumulative_kv_tokens": self.cumulative_kv_tokens,
            "generated_tokens": self.generated_tokens,
            "model_calls": self.model_calls,
            "reward_calls": self.reward_calls,
            "embed_calls": self.embed_calls,
            "solves_nonoptimal": self.solves_nonoptimal,
        }
        if include_timings:
            d.update(
                {
                    "solver_time": self.solver_time,
                    "cluster_time": self.cluster_time,
                    "generation_time": self.generation_time,
                    "embed_time": self.embed_time,
                }
            )
        return d


def kv_reduction(baseline: SearchMetrics, candidate: SearchMetrics) -> float:
    """How much smaller the candidate's cumulative KV footprint is (>1 is better)."""
    if candidate.cumulative_kv_tokens == 0:
        raise ValueError("candidate run recorded zero cumulative KV tokens")
    return baseline.cumulative_kv_tokens / candidate.cumulative_kv_tokens


def overhead_fraction(m: SearchMetrics) -> float:
    """Share of runtime spent on the solver, clustering, and embedding."""
    overhead = m.solver_time + m.cluster_time + m.embed_time
    total = overhead + m.generation_time
    if total <= 0:
        return 0.0
    return overhead / total
