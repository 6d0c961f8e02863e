"""Seeded synthetic reasoning environment.

A problem is a depth-D move game: at every depth there are M moves, G of
which are "gold".  A trajectory is correct iff it picks a gold move at
every depth.  Step generation samples a gold move with probability
``p_good``; the verifier score is the gold fraction of the trajectory plus
seeded Gaussian noise; the embedder maps a step to a unit vector anchored
per (depth, move) with small per-variant noise, so steps with the same
move label land in the same semantic cluster.

Everything is a pure function of seeds: generation streams are keyed by
(problem seed, depth, prefix content, continuation index), scores by the
trajectory content, and embeddings by the step text alone, so results are
identical across runs, parallelism levels, and transports.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .semantics import Embedding

# stream domain tags
_GOLD, _GEN, _SCORE, _EMBED = 11, 12, 13, 14

_STEP_RE = re.compile(r"^d(\d+):m(\d+):v(\d+)$")
_ANSWER_RE = re.compile(r"^m(\d+)(-m\d+)*$")
_PROMPT_RE = re.compile(r"^sim:(\d+):(\d+)$")


def _digest_int(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(list(key))


@dataclass(frozen=True)
class SimConfig:
    depth: int = 6
    moves_per_depth: int = 8
    gold_moves: int = 2
    p_good: float = 0.55
    reward_noise: float = 0.1
    embed_dim: int = 32
    embed_noise: float = 0.05
    tokens_per_step: int = 40
    variants_per_move: int = 4

    def __post_init__(self):
        if self.depth < 1 or self.moves_per_depth < 1 or self.tokens_per_step < 1:
            raise ValueError("depth, moves_per_depth, tokens_per_step must be >= 1")
        if not 1 <= self.gold_moves <= self.moves_per_depth:
            raise ValueError("gold_moves must be in [1, moves_per_depth]")
        if not 0.0 <= self.p_good <= 1.0:
            raise ValueError("p_good must be a probability")
        if self.reward_noise < 0 or self.embed_noise < 0:
            raise ValueError("noise levels must be >= 0")
        if self.embed_dim < 1 or self.variants_per_move < 1:
            raise ValueError("embed_dim and variants_per_move must be >= 1")


@dataclass(frozen=True)
class SimProblem:
    suite_seed: int
    index: int
    config: SimConfig
    gold: tuple[tuple[int, ...], ...] = field(init=False)
    seed: int = field(init=False)

    def __post_init__(self):
        seed = int(
            np.random.SeedSequence([self.suite_seed, self.index]).generate_state(
                1, dtype=np.uint64
            )[0]
        )
        object.__setattr__(self, "seed", seed)
        rng = _rng(seed, _GOLD)
        gold = tuple(
            tuple(
                sorted(
                    int(m)
                    for m in rng.choice(
                        self.config.moves_per_depth, size=self.config.gold_moves, replace=False
                    )
                )
            )
            for _ in range(self.config.depth)
        )
        object.__setattr__(self, "gold", gold)

    @property
    def prompt(self) -> str:
        return f"sim:{self.suite_seed}:{self.index}"

    @property
    def prompt_tokens(self) -> int:
        return 25

    @property
    def canonical_answer(self) -> str:
        return render_answer([g[0] for g in self.gold])

    @classmethod
    def from_prompt(cls, prompt: str, config: SimConfig) -> "SimProblem":
        m = _PROMPT_RE.match(prompt)
        if not m:
            raise ValueError(f"not a sim prompt: {prompt!r}")
        return cls(suite_seed=int(m.group(1)), index=int(m.group(2)), config=config)


def parse_step(text: str) -> tuple[int, int, int]:
    """(depth, move, variant) of a step string like 'd2:m5:v1'."""
    m = _STEP_RE.match(text)
    if not m:
        raise ValueError(f"unparseable step text: {text!r}")
    return int(m.group(1)), int(m.group(2)), int(m.group(3))


def render_step(depth: int, move: int, variant: int) -> str:
    return f"d{depth}:m{move}:v{variant}"


def render_answer(moves) -> str:
    return "-".join(f"m{m}" for m in moves)


def steps_to_answer(problem: SimProblem, steps) -> str:
    """Answer string of a completed trajectory.

    All-gold trajectories collapse to the problem's canonical answer, the
    way equivalent correct derivations of a math problem state the same
    final result; anything else renders its own move tuple.
    """
    moves = [parse_step(s)[1] for s in steps]
    if len(moves) == problem.config.depth and all(
        m in problem.gold[d] for d, m in enumerate(moves)
    ):
        return problem.canonical_answer
    return render_answer(moves)


def gen_step(problem: SimProblem, prefix_steps, rng: np.random.Generator):
    """Sample one continuation step; returns (text, move, tokens, terminal)."""
    cfg = problem.config
    depth = len(prefix_steps)
    if depth >= cfg.depth:
        raise ValueError(f"prefix already at terminal depth {cfg.depth}")
    gold = problem.gold[depth]
    non_gold = [m for m in range(cfg.moves_per_depth) if m not in gold]
    if not non_gold or rng.random() < cfg.p_good:
        move = gold[int(rng.integers(len(gold)))]
    else:
        move = non_gold[int(rng.integers(len(non_gold)))]
    variant = int(rng.integers(cfg.variants_per_move))
    terminal = depth + 1 == cfg.depth
    return render_step(depth + 1, move, variant), move, cfg.tokens_per_step, terminal


def gen_rng(problem: SimProblem, prefix_steps, continuation: int) -> np.random.Generator:
    """Stream for one continuation, keyed by prefix content so pruning other
    branches never perturbs the samples drawn here."""
    return _rng(
        problem.seed, _GEN, len(prefix_steps), _digest_int(*prefix_steps), continuation
    )


def score(problem: SimProblem, trajectory_steps) -> float:
    """Verifier surrogate: gold-step fraction plus seeded Gaussian noise.

    The fraction is taken over the problem depth, so a partial trajectory
    scores its progress toward a fully correct solution; a full-length
    all-gold trajectory scores 1.0 before noise.  Keeping the per-step
    signal at the same scale as the noise is what makes premature
    commitment dangerous and diversity worth paying for.
    """
    if not trajectory_steps:
        raise ValueError("cannot score an empty trajectory")
    parsed = [parse_step(s) for s in trajectory_steps]
    hits = 0
    for d, move, _ in parsed:
        if not 1 <= d <= problem.config.depth:
            raise ValueError(f"step depth {d} outside problem depth")
        if move in problem.gold[d - 1]:
            hits += 1
    frac = hits / problem.config.depth
    sigma = problem.config.reward_noise
    if sigma > 0:
        rng = _rng(problem.seed, _SCORE, _digest_int(*trajectory_steps))
        frac += sigma * rng.standard_normal()
    return float(min(1.0, max(0.0, frac)))


class SimEmbedder:
    """Deterministic per-text embeddings with per-move anchors."""

    def __init__(self, seed: int, config: SimConfig):
        self.seed = seed
        self.config = config

    def embed_text(self, text: str) -> Embedding:
        d, m, v = parse_step(text)
        cfg = self.config
        anchor = _rng(self.seed, _EMBED, d, m).standard_normal(cfg.embed_dim)
        anchor /= np.linalg.norm(anchor)
        if cfg.embed_noise > 0:
            noise = _rng(self.seed, _EMBED, d, m, v + 1).standard_normal(cfg.embed_dim)
            noise /= np.linalg.norm(noise)
            vec = anchor + cfg.embed_noise * noise
        else:
            vec = anchor
        return Embedding(vec / np.linalg.norm(vec))

    def embed(self, texts) -> list[Embedding]:
        return [self.embed_text(t) for t in texts]


def check_answer(problem: SimProblem, answer: str) -> bool:
    """True iff the answer renders an all-gold move tuple."""
    if not _ANSWER_RE.match(answer or ""):
        return False
    moves = [int(p[1:]) for p in answer.split("-")]
    if len(moves) != problem.config.depth:
        return False
    return all(m in problem.gold[d] for d, m in enumerate(moves))
