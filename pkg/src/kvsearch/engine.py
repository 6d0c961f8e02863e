"""The search loop.

One round: expand every weighted leaf through the generation provider,
score each new partial trajectory with the reward provider (the final
verifier score at each step is the step's reward), move terminal leaves to
the completed set and shrink the width by one per completion, then hand
the frontier to the policy, prune zero-weight leaves, and expand again.
The final answer is picked by weighted majority voting: identical answers
pool their final scores and the largest pool wins.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .backend import compose_trajectory
from .errors import BackendError
from .metrics import SearchMetrics, overhead_fraction
from .policies import PolicyConfig, beam_select, dvts_select, ets_select, rebase_select
from .simenv import SimProblem, check_answer, steps_to_answer
from .tree import SearchTree


@dataclass
class SearchConfig:
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    max_depth: int = 6
    seed: int = 0
    backend: str = "sim"  # "sim" | "http"
    kv_bytes_per_token: float = 1.0
    include_prompt_kv: bool = True
    collect_trace: bool = False
    stop_condition: str | None = None

    def validate(self) -> None:
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.backend not in ("sim", "http"):
            raise ValueError("backend must be 'sim' or 'http'")
        if self.kv_bytes_per_token <= 0:
            raise ValueError("kv_bytes_per_token must be > 0")
        self.policy.validate()


class Problem:
    """A searchable problem: a prompt plus answer handling.

    The default answer of a completed trajectory is its last step text;
    domain-specific problems override the extraction and the check.
    """

    def __init__(self, key: str, prompt: str, prompt_tokens: int, ground_truth=None):
        self.key = key
        self.prompt = prompt
        self.prompt_tokens = prompt_tokens
        self.ground_truth = ground_truth

    def answer_from_steps(self, steps) -> str:
        return steps[-1].strip() if steps else ""

    def check(self, answer) -> bool | None:
        if self.ground_truth is None:
            return None
        return answer == self.ground_truth


class SimSearchProblem(Problem):
    """Engine-facing view of a synthetic problem."""

    def __init__(self, sim_problem: SimProblem):
        super().__init__(
            key=f"sim:{sim_problem.suite_seed}:{sim_problem.index}",
            prompt=sim_problem.prompt,
            prompt_tokens=sim_problem.prompt_tokens,
            ground_truth=sim_problem.canonical_answer,
        )
        self.sim = sim_problem

    def answer_from_steps(self, steps) -> str:
        return steps_to_answer(self.sim, steps)

    def check(self, answer) -> bool | None:
        return check_answer(self.sim, answer)


@dataclass
class ProblemResult:
    key: str
    final_answer: str | None
    correct: bool | None
    completed: list[tuple[str, float]]
    metrics: SearchMetrics
    unanswered: bool
    error: str | None = None
    trace: list | None = None

    def to_record(self, kv_bytes_per_token: float = 1.0) -> dict:
        """Deterministic JSONL payload; wall-clock timings stay out."""
        rec = {
            "key": self.key,
            "final_answer": self.final_answer,
            "correct": self.correct,
            "unanswered": self.unanswered,
            "completed": [[a, r] for a, r in self.completed],
            "metrics": self.metrics.to_dict(include_timings=False),
            "cumulative_kv_bytes": self.metrics.cumulative_kv_tokens * kv_bytes_per_token,
            "error": self.error,
        }
        if self.trace is not None:
            rec["trace"] = self.trace
        return rec


def aggregate(completed) -> str:
    """Weighted majority vote over (answer, final reward) pairs."""
    if not completed:
        raise ValueError("no completed trajectories to aggregate")
    totals: dict[str, float] = {}
    for answer, reward in completed:
        totals[answer] = totals.get(answer, 0.0) + reward
    best = None
    for answer in sorted(totals):
        if best is None or totals[answer] > totals[best]:
            best = answer
    return best


def run_problem(problem: Problem, cfg: SearchConfig, backend) -> ProblemResult:
    """Search one problem to completion against a provider triple."""
    cfg.validate()
    pol = cfg.policy
    tree = SearchTree(problem.prompt, problem.prompt_tokens)
    metrics = SearchMetrics()
    width = pol.width
    completed: list[tuple[str, float]] = []
    terminal_ids: set[int] = set()
    subtree_of: dict[int, int] = {}
    subtree_widths: dict[int, int] = {}
    trace: list | None = [] if cfg.collect_trace else None

    def expand(leaf_id: int, n: int) -> tuple[list[int], int]:
        path = [problem.prompt] + tree.step_texts(leaf_id)
        t0 = time.perf_counter()
        samples = backend.generate(path, n, pol.sampling_temperature, cfg.stop_condition)
        metrics.generation_time += time.perf_counter() - t0
        new_ids = []
        tokens = 0
        for sample in samples:
            steps = tree.step_texts(leaf_id) + [sample.text]
            reward = backend.score(compose_trajectory(problem.prompt, steps))
            metrics.reward_calls += 1
            child = tree.add_child(leaf_id, sample.text, sample.token_count, reward)
            if sample.terminal:
                terminal_ids.add(child)
            if leaf_id in subtree_of:
                subtree_of[child] = subtree_of[leaf_id]
            new_ids.append(child)
            tokens += sample.token_count
        return new_ids, tokens

    # initial expansion: width first steps from the prompt
    frontier, new_tokens = expand(tree.root, width)
    metrics.record_step(tree, new_tokens, len(frontier), cfg.include_prompt_kv)
    depth = 1

    while True:
        for leaf_id in sorted(frontier):
            if leaf_id in terminal_ids:
                node = tree.node(leaf_id)
                answer = problem.answer_from_steps(tree.step_texts(leaf_id))
                tree.mark_completed(leaf_id)
                completed.append((answer, node.reward))
                width -= 1
                tag = subtree_of.get(leaf_id)
                if tag is not None and tag in subtree_widths:
                    subtree_widths[tag] -= 1
        if width <= 0:
            break
        actives = tree.active_leaves()
        if not actives or depth >= cfg.max_depth:
            break

        scored = [(i, tree.node(i).reward) for i in actives]
        decision = None
        if pol.method == "beam":
            alloc = beam_select(scored, pol, width)
        elif pol.method == "dvts":
            if not subtree_widths:
                _assign_subtrees(actives, pol, width, subtree_of, subtree_widths)
            grouped: dict[int, list] = {s: [] for s in subtree_widths}
            for i, r in scored:
                grouped[subtree_of[i]].append((i, r))
            alloc = dvts_select(grouped, subtree_widths, pol)
        elif pol.method == "rebase":
            alloc = rebase_select(scored, pol, width)
        else:  # ets
            leaves = [(i, r, tree.node(i).text) for i, r in scored]
            decision, alloc = ets_select(tree, leaves, pol, backend, width, metrics)

        positive = alloc.positive_ids()
        if set(positive) != set(tree.active_leaves()):
            tree.prune_to(positive)

        frontier = []
        new_tokens = 0
        calls = 0
        for leaf_id, w in sorted(alloc.entries):
            if w <= 0:
                continue
            ids, tokens = expand(leaf_id, w)
            frontier.extend(ids)
            new_tokens += tokens
            calls += w
        depth += 1
        metrics.record_step(tree, new_tokens, calls, cfg.include_prompt_kv)
        if trace is not None:
            round_rec = {
                "depth": depth,
                "width": width,
                "allocation": [[i, w] for i, w in alloc.entries],
                "kv_tokens": metrics.per_step_kv_tokens[-1],
            }
            if decision is not None:
                round_rec["prune"] = decision.to_dict()
            trace.append(round_rec)

    unanswered = not completed
    final_answer = None if unanswered else aggregate(completed)
    correct = problem.check(final_answer) if not unanswered else (
        False if problem.ground_truth is not None else None
    )
    return ProblemResult(
        key=problem.key,
        final_answer=final_answer,
        correct=correct,
        completed=completed,
        metrics=metrics,
        unanswered=unanswered,
        trace=trace,
    )


def _assign_subtrees(actives, pol: PolicyConfig, width: int, subtree_of, subtree_widths):
    """Partition the first frontier into keep_k contiguous subtrees."""
    m = min(pol.resolved_keep_k(), len(actives))
    ordered = sorted(actives)
    size, extra = divmod(len(ordered), m)
    wbase, wextra = divmod(width, m)
    pos = 0
    for s in range(m):
        take = size + (1 if s < extra else 0)
        for leaf_id in ordered[pos : pos + take]:
            subtree_of[leaf_id] = s
        pos += take
        subtree_widths[s] = wbase + (1 if s < wextra else 0)


def run_problem_safe(problem: Problem, cfg: SearchConfig, backend) -> ProblemResult:
    try:
        return run_problem(problem, cfg, backend)
    except BackendError as exc:
        return ProblemResult(
            key=problem.key,
            final_answer=None,
            correct=False if problem.ground_truth is not None else None,
            completed=[],
            metrics=SearchMetrics(),
            unanswered=True,
            error=f"{type(exc).__name__}: {exc}",
        )


@dataclass
class SuiteReport:
    results: list[ProblemResult]
    accuracy: float | None
    mean_cumulative_kv: float
    mean_generated_tokens: float
    total_model_calls: int
    total_reward_calls: int
    total_embed_calls: int
    solves_nonoptimal: int
    overhead_fraction: float
    errors: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mean_cumulative_kv": self.mean_cumulative_kv,
            "mean_generated_tokens": self.mean_generated_tokens,
            "total_model_calls": self.total_model_calls,
            "total_reward_calls": self.total_reward_calls,
            "total_embed_calls": self.total_embed_calls,
            "solves_nonoptimal": self.solves_nonoptimal,
            "errors": self.errors,
        }


def run_suite(problems, cfg: SearchConfig, backend, parallelism: int = 1) -> SuiteReport:
    """Run problems with bounded concurrency; results keep input order."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if parallelism == 1:
        results = [run_problem_safe(p, cfg, backend) for p in problems]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(lambda p: run_problem_safe(p, cfg, backend), problems))

    graded = [r.correct for r in results if r.correct is not None]
    n = len(results)
    total = SearchMetrics()
    for r in results:
        m = r.metrics
        total.cumulative_kv_tokens += m.cumulative_kv_tokens
        total.generated_tokens += m.generated_tokens
        total.model_calls += m.model_calls
        total.reward_calls += m.reward_calls
        total.embed_calls += m.embed_calls
        total.solver_time += m.solver_time
        total.cluster_time += m.cluster_time
        total.generation_time += m.generation_time
        total.embed_time += m.embed_time
        total.solves_nonoptimal += m.solves_nonoptimal
    return SuiteReport(
        results=results,
        accuracy=(sum(graded) / len(graded)) if graded else None,
        mean_cumulative_kv=(total.cumulative_kv_tokens / n) if n else 0.0,
        mean_generated_tokens=(total.generated_tokens / n) if n else 0.0,
        total_model_calls=total.model_calls,
        total_reward_calls=total.reward_calls,
        total_embed_calls=total.embed_calls,
        solves_nonoptimal=total.solves_nonoptimal,
        overhead_fraction=overhead_fraction(total),
        errors=sum(1 for r in results if r.error),
    )
