"""Exact softmax policies: probabilities, sampling, gradients, updates."""

import math

import numpy as np
import pytest
from scipy import stats

from sqlarena.errors import UnknownCandidate, UnknownQuestion
from sqlarena.toypolicy import CandidateSpace, SoftmaxPolicy, load_policy, save_policy


def space_with(n: int, key: str = "q") -> CandidateSpace:
    space = CandidateSpace()
    cands = [f"SELECT {i}" for i in range(n)]
    space.add_question(key, cands, cands[0])
    return space


def finite_difference(policy: SoftmaxPolicy, question: str, sql: str, h=1e-5):
    base = policy.logits(question).copy()
    grad = np.zeros_like(base)
    for j in range(len(base)):
        for sign in (+1, -1):
            shifted = base.copy()
            shifted[j] += sign * h
            policy.set_logits(question, shifted)
            if sign > 0:
                upper = policy.log_prob(question, sql)
            else:
                lower = policy.log_prob(question, sql)
        grad[j] = (upper - lower) / (2 * h)
    policy.set_logits(question, base)
    return grad


class TestLogProb:
    def test_uniform_four_candidates(self):
        policy = SoftmaxPolicy(space_with(4))
        assert policy.log_prob("q", "SELECT 0") == pytest.approx(math.log(0.25), abs=1e-12)

    def test_two_candidate_closed_form(self):
        policy = SoftmaxPolicy(space_with(2))
        policy.set_logits("q", [1.0, 0.0])
        want = math.log(math.e / (math.e + 1.0))
        assert policy.log_prob("q", "SELECT 0") == pytest.approx(want, abs=1e-12)
        assert abs(want - -0.313262) < 1e-6

    def test_unknown_candidate_and_question(self):
        policy = SoftmaxPolicy(space_with(3))
        with pytest.raises(UnknownCandidate):
            policy.log_prob("q", "SELECT 99")
        with pytest.raises(UnknownQuestion):
            policy.log_prob("nope", "SELECT 0")

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(0)
        policy = SoftmaxPolicy(space_with(6))
        for _ in range(50):
            policy.set_logits("q", rng.normal(size=6) * 5)
            assert abs(policy.probs("q").sum() - 1.0) < 1e-9


class TestSampling:
    def test_dominant_logit_always_drawn(self):
        policy = SoftmaxPolicy(space_with(4))
        policy.set_logits("q", [50.0, 0.0, 0.0, 0.0])
        draws = policy.sample("q", np.random.default_rng(1), 1000)
        assert all(d == "SELECT 0" for d in draws)

    def test_uniform_frequencies(self):
        policy = SoftmaxPolicy(space_with(3))
        draws = policy.sample("q", np.random.default_rng(7), 9000)
        for i in range(3):
            freq = draws.count(f"SELECT {i}") / 9000
            assert abs(freq - 1 / 3) < 0.02

    def test_zero_draws(self):
        policy = SoftmaxPolicy(space_with(2))
        assert policy.sample("q", np.random.default_rng(0), 0) == []

    def test_chi_square_against_softmax(self):
        policy = SoftmaxPolicy(space_with(3))
        policy.set_logits("q", [0.3, -0.2, 0.9])
        probs = policy.probs("q")
        draws = policy.sample("q", np.random.default_rng(11), 10000)
        observed = [draws.count(f"SELECT {i}") for i in range(3)]
        expected = [p * 10000 for p in probs]
        result = stats.chisquare(observed, expected)
        assert result.pvalue > 0.01


class TestGradients:
    def test_symmetric_two_candidates(self):
        policy = SoftmaxPolicy(space_with(2))
        grad = policy.grad_log_prob("q", "SELECT 0")
        assert grad == pytest.approx([0.5, -0.5], abs=1e-12)

    def test_sums_to_zero(self):
        rng = np.random.default_rng(5)
        policy = SoftmaxPolicy(space_with(5))
        for _ in range(20):
            policy.set_logits("q", rng.normal(size=5) * 3)
            grad = policy.grad_log_prob("q", "SELECT 3")
            assert abs(grad.sum()) < 1e-12

    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(123)
        for trial in range(100):
            n = int(rng.integers(2, 7))
            policy = SoftmaxPolicy(space_with(n))
            policy.set_logits("q", rng.normal(size=n) * 2)
            target = f"SELECT {int(rng.integers(n))}"
            analytic = policy.grad_log_prob("q", target)
            numeric = finite_difference(policy, "q", target)
            assert np.max(np.abs(analytic - numeric)) < 1e-6


class TestApplyGradient:
    def test_zero_gradient_only_bumps_version(self):
        policy = SoftmaxPolicy(space_with(3))
        before = policy.logits("q").copy()
        version = policy.version
        policy.apply_gradient("q", np.zeros(3))
        assert np.array_equal(policy.logits("q"), before)
        assert policy.version == version + 1

    def test_descent_arithmetic(self):
        policy = SoftmaxPolicy(space_with(2), learning_rate=0.1)
        policy.apply_gradient("q", np.array([1.0, -1.0]))
        assert policy.logits("q") == pytest.approx([-0.1, 0.1], abs=1e-15)

    def test_out_of_range_index(self):
        policy = SoftmaxPolicy(space_with(2))
        with pytest.raises(UnknownCandidate):
            policy.apply_gradient("q", {5: 1.0})

    def test_descent_on_neg_log_gold_increases_gold(self):
        rng = np.random.default_rng(17)
        policy = SoftmaxPolicy(space_with(4), learning_rate=0.01)
        policy.set_logits("q", rng.normal(size=4))
        before = policy.log_prob("q", "SELECT 0")
        policy.apply_gradient("q", -policy.grad_log_prob("q", "SELECT 0"))
        assert policy.log_prob("q", "SELECT 0") > before


class TestClone:
    def test_clone_is_independent(self):
        policy = SoftmaxPolicy(space_with(3))
        policy.set_logits("q", [1.0, 2.0, 3.0])
        copy = policy.clone()
        assert copy.version == policy.version
        assert np.array_equal(copy.logits("q"), policy.logits("q"))
        policy.apply_gradient("q", np.ones(3))
        assert copy.log_prob("q", "SELECT 2") == pytest.approx(
            SoftmaxPolicy(space_with(3), logits={"q": [1.0, 2.0, 3.0]}).log_prob(
                "q", "SELECT 2"
            )
        )
        assert copy.version != policy.version


class TestCheckpoint:
    def test_json_round_trip(self, tmp_path):
        space = space_with(3)
        policy = SoftmaxPolicy(space, learning_rate=0.25)
        policy.set_logits("q", [0.5, -1.5, 2.0])
        policy.version = 4
        path = tmp_path / "policy.json"
        save_policy(policy, str(path), extra={"label": "demo"})
        loaded, extra = load_policy(str(path), space)
        assert extra == {"label": "demo"}
        assert loaded.version == 4
        assert loaded.learning_rate == 0.25
        assert np.array_equal(loaded.logits("q"), policy.logits("q"))
