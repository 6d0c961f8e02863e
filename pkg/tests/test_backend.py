import numpy as np
import pytest

from kvsearch.backend import HttpBackend, SimBackend, compose_trajectory, split_trajectory
from kvsearch.errors import RewardRangeError, SchemaError, TransportError
from kvsearch.mockserver import MockServer
from kvsearch.semantics import Embedding
from kvsearch.simenv import SimConfig, SimProblem


@pytest.fixture(scope="module")
def sim_backend():
    return SimBackend(SimConfig(), embed_seed=11)


@pytest.fixture(scope="module")
def http_pair(sim_backend):
    with MockServer(sim_backend) as server:
        yield sim_backend, HttpBackend(base_url=server.base_url)


def test_trajectory_roundtrip():
    traj = compose_trajectory("prompt", ["s1", "s2"])
    assert split_trajectory(traj) == ("prompt", ["s1", "s2"])


def test_sim_generate_count_and_determinism(sim_backend):
    prompt = SimProblem(11, 0, SimConfig()).prompt
    a = sim_backend.generate([prompt], n=3, temperature=1.0)
    b = sim_backend.generate([prompt], n=3, temperature=1.0)
    assert len(a) == 3 and a == b
    assert all(s.token_count > 0 for s in a)


def test_sim_generate_requires_prompt(sim_backend):
    with pytest.raises(ValueError):
        sim_backend.generate([], 1, 1.0)


def test_sim_score_in_range(sim_backend):
    prompt = SimProblem(11, 0, SimConfig()).prompt
    steps = [s.text for s in sim_backend.generate([prompt], n=1, temperature=1.0)]
    r = sim_backend.score(compose_trajectory(prompt, steps))
    assert 0.0 <= r <= 1.0


def test_sim_embed_duplicates_identical(sim_backend):
    a, b = sim_backend.embed(["d1:m2:v0", "d1:m2:v0"])
    assert np.array_equal(a.vector, b.vector)


def test_mock_generate_roundtrip(http_pair):
    sim, http = http_pair
    prompt = SimProblem(11, 3, SimConfig()).prompt
    direct = sim.generate([prompt], n=3, temperature=1.0)
    remote = http.generate([prompt], n=3, temperature=1.0)
    assert direct == remote


def test_mock_score_roundtrip(http_pair):
    sim, http = http_pair
    prompt = SimProblem(11, 3, SimConfig()).prompt
    steps = [s.text for s in sim.generate([prompt], n=2, temperature=1.0)]
    traj = compose_trajectory(prompt, [steps[0]])
    assert sim.score(traj) == http.score(traj)


def test_mock_embed_roundtrip(http_pair):
    sim, http = http_pair
    texts = ["d1:m2:v0", "d2:m5:v1"]
    direct = sim.embed(texts)
    remote = http.embed(texts)
    for d, r in zip(direct, remote):
        assert np.array_equal(d.vector, r.vector)


def test_http_reports_bad_endpoint(http_pair):
    _, http = http_pair
    bad = HttpBackend(base_url=http.base_url + "/nope")
    with pytest.raises(TransportError):
        bad.generate(["sim:11:0"], 1, 1.0)


def test_http_retries_then_fails():
    http = HttpBackend(base_url="http://127.0.0.1:1")  # nothing listens here
    with pytest.raises(TransportError):
        http.score("x")


class BadRewardProvider:
    def generate(self, path, n, temperature, stop=None):
        raise ValueError("unused")

    def score(self, trajectory):
        return 1.5

    def embed(self, texts):
        return [Embedding([1.0, 0.0]) for _ in texts]


def test_reward_out_of_range_is_distinct_error():
    with MockServer(BadRewardProvider()) as server:
        http = HttpBackend(base_url=server.base_url)
        with pytest.raises(RewardRangeError):
            http.score("anything")


class MalformedProvider:
    def generate(self, path, n, temperature, stop=None):
        class Weird:
            text = "x"
            token_count = 0  # violates the schema
            terminal = False

        return [Weird()]

    def score(self, trajectory):
        return 0.5

    def embed(self, texts):
        return []


def test_schema_violation_is_distinct_error():
    with MockServer(MalformedProvider()) as server:
        http = HttpBackend(base_url=server.base_url)
        with pytest.raises(SchemaError):
            http.generate(["p"], 1, 1.0)
        with pytest.raises(SchemaError):
            http.embed(["a"])


def test_missing_base_url_rejected(monkeypatch):
    monkeypatch.delenv("KVSEARCH_BACKEND_URL", raising=False)
    with pytest.raises(ValueError):
        HttpBackend()


def test_env_base_url(monkeypatch, http_pair):
    _, http = http_pair
    monkeypatch.setenv("KVSEARCH_BACKEND_URL", http.base_url)
    env_backend = HttpBackend()
    assert env_backend.base_url == http.base_url
