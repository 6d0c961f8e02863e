"""Generation, reward, and embedding providers.

Two implementations of the same three-call surface: an in-process adapter
over the synthetic environment, and an HTTP client speaking JSON to
``/generate``, ``/score``, and ``/embed`` endpoints (see README for the
exact wire format).  Transport failures are retried once and then raised;
schema violations and out-of-range rewards are distinct errors so a run
can report what actually went wrong.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass

import requests

from . import simenv
from .errors import RewardRangeError, SchemaError, TransportError
from .semantics import Embedding
from .simenv import SimConfig, SimEmbedder, SimProblem

TRAJECTORY_SEP = "\n"


@dataclass(frozen=True)
class StepSample:
    text: str
    token_count: int
    terminal: bool


def compose_trajectory(prompt: str, steps) -> str:
    """Single-string trajectory wire form: prompt line, then one step per line."""
    return TRAJECTORY_SEP.join([prompt] + list(steps))


def split_trajectory(trajectory: str) -> tuple[str, list[str]]:
    lines = trajectory.split(TRAJECTORY_SEP)
    return lines[0], lines[1:]


class SimBackend:
    """In-process provider triple over the synthetic environment.

    Problems are recovered from the prompt line, so the same adapter serves
    any number of concurrent searches; every sample is a pure function of
    (problem seed, prefix content, continuation index).
    """

    def __init__(self, config: SimConfig, embed_seed: int = 0):
        self.config = config
        self.embedder = SimEmbedder(embed_seed, config)
        self._problems: dict[str, SimProblem] = {}
        self._lock = threading.Lock()

    def _problem(self, prompt: str) -> SimProblem:
        with self._lock:
            prob = self._problems.get(prompt)
            if prob is None:
                prob = SimProblem.from_prompt(prompt, self.config)
                self._problems[prompt] = prob
            return prob

    def generate(self, path, n: int, temperature: float, stop=None) -> list[StepSample]:
        if not path:
            raise ValueError("generation path must start with the prompt")
        if n < 1:
            raise ValueError("n must be >= 1")
        problem = self._problem(path[0])
        prefix = list(path[1:])
        out = []
        for j in range(n):
            rng = simenv.gen_rng(problem, prefix, j)
            text, _, tokens, terminal = simenv.gen_step(problem, prefix, rng)
            out.append(StepSample(text=text, token_count=tokens, terminal=terminal))
        return out

    def score(self, trajectory: str) -> float:
        prompt, steps = split_trajectory(trajectory)
        problem = self._problem(prompt)
        return simenv.score(problem, steps)

    def embed(self, texts) -> list[Embedding]:
        return self.embedder.embed(texts)


def _json_or_schema_error(resp, endpoint: str) -> dict:
    try:
        return resp.json()
    except ValueError as exc:
        raise SchemaError(f"{endpoint}: response is not JSON: {exc}") from exc


class HttpBackend:
    """JSON-over-HTTP provider client.

    Base URL resolution order: constructor argument, then the
    ``KVSEARCH_BACKEND_URL`` environment variable.  A bearer token from
    ``KVSEARCH_BACKEND_TOKEN`` is passed through when present.
    """

    def __init__(
        self,
        base_url: str | None = None,
        generate_timeout: float = 120.0,
        score_timeout: float = 30.0,
        embed_timeout: float = 30.0,
        token: str | None = None,
    ):
        url = base_url or os.environ.get("KVSEARCH_BACKEND_URL")
        if not url:
            raise ValueError("no backend URL: pass base_url or set KVSEARCH_BACKEND_URL")
        self.base_url = url.rstrip("/")
        self.generate_timeout = generate_timeout
        self.score_timeout = score_timeout
        self.embed_timeout = embed_timeout
        self.token = token if token is not None else os.environ.get("KVSEARCH_BACKEND_TOKEN")

    def _post(self, endpoint: str, payload: dict, timeout: float) -> dict:
        url = f"{self.base_url}{endpoint}"
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        last_exc = None
        for _ in range(2):  # one retry on transport failure
            try:
                resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code != 200:
                raise TransportError(f"{endpoint}: HTTP {resp.status_code}: {resp.text[:200]}")
            return _json_or_schema_error(resp, endpoint)
        raise TransportError(f"{endpoint}: transport failed after retry: {last_exc}")

    def generate(self, path, n: int, temperature: float, stop=None) -> list[StepSample]:
        payload = {
            "path": list(path),
            "n": n,
            "temperature": temperature,
            "stop": stop,
        }
        data = self._post("/generate", payload, self.generate_timeout)
        try:
            steps = [
                StepSample(
                    text=s["text"],
                    token_count=int(s["token_count"]),
                    terminal=bool(s["terminal"]),
                )
                for s in data["steps"]
            ]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"/generate: malformed response: {exc}") from exc
        for s in steps:
            if s.token_count <= 0:
                raise SchemaError("/generate: token_count must be > 0")
        return steps

    def score(self, trajectory: str) -> float:
        data = self._post("/score", {"trajectory": trajectory}, self.score_timeout)
        try:
            reward = float(data["reward"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"/score: malformed response: {exc}") from exc
        if not 0.0 <= reward <= 1.0:
            raise RewardRangeError(f"/score: reward {reward} outside [0, 1]")
        return reward

    def embed(self, texts) -> list[Embedding]:
        data = self._post("/embed", {"texts": list(texts)}, self.embed_timeout)
        try:
            vectors = [Embedding(v) for v in data["vectors"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"/embed: malformed response: {exc}") from exc
        if len(vectors) != len(texts):
            raise SchemaError("/embed: batch length mismatch")
        return vectors
