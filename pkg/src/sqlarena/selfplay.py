"""Error-driven self-play optimization over a pool of toy policies.

Each round selects the pool's best policy as the main model and its
worst as the opponent (excluding the previously used opponent), builds
preference pairs by executing the opponent's samples, and updates a
clone of the main policy with the analytic gradient of the error-driven
loss.  The loss activates only on pairs whose negative member executes
differently from gold (reward 1); correct opponent outputs contribute a
constant term and exactly zero gradient.  DPO and a SPIN-style variant
are implemented as comparison baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, EmptyPool
from .executor import EvalContext, Verdict
from .samples import SynthSample
from .toypolicy import CandidateSpace, SoftmaxPolicy


def reward(verdict: Verdict) -> int:
    """1 when execution differs from gold (or fails), else 0."""
    return 0 if verdict.kind == "correct" else 1


def logistic_loss(t: float) -> float:
    """ln(1 + exp(-t)), stable for |t| up to ~1e3."""
    return max(0.0, -t) + math.log1p(math.exp(-abs(t)))


def sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


@dataclass(frozen=True)
class PreferencePair:
    question: str
    y_plus: str
    y_minus: str
    reward: int
    source: str  # opponent_correct | gold_fallback

    def __post_init__(self) -> None:
        if self.reward not in (0, 1):
            raise ValueError("reward must be 0 or 1")
        if self.source not in ("opponent_correct", "gold_fallback"):
            raise ValueError(f"unknown pair source {self.source!r}")
        if self.reward == 1 and self.y_plus == self.y_minus:
            raise ValueError("reward-1 pairs need distinct members")


@dataclass
class PolicyRecord:
    policy: SoftmaxPolicy
    val_accuracy: float
    round: int
    label: str


@dataclass(frozen=True)
class SelfPlayConfig:
    lam: float = 1.0  # loss scaling; the preference-scaling knob aliases this
    max_iterations: int = 5
    samples_per_question: int = 4
    learning_rate: float = 0.05
    gradient_steps: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.samples_per_question < 1:
            raise ValueError("samples_per_question must be at least 1")
        if self.gradient_steps < 1:
            raise ValueError("gradient_steps must be at least 1")


@dataclass(frozen=True)
class RoundReport:
    round: int
    main: str
    opponent: str
    loss: float
    pairs_total: int
    pairs_reward1: int
    pairs_gold_fallback: int
    val_accuracy_before: float
    val_accuracy_after: float

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "main": self.main,
            "opponent": self.opponent,
            "loss": self.loss,
            "pairs": {
                "total": self.pairs_total,
                "reward1": self.pairs_reward1,
                "gold_fallback": self.pairs_gold_fallback,
            },
            "val_accuracy_before": self.val_accuracy_before,
            "val_accuracy_after": self.val_accuracy_after,
        }


def build_preference_pairs(
    opponent: SoftmaxPolicy,
    val: list[SynthSample],
    space: CandidateSpace,
    ctx: EvalContext,
    samples_per_question: int,
    rng: np.random.Generator,
) -> list[PreferencePair]:
    """Sample the opponent on each validation question and pair by verdict.

    Incorrect samples become the negative member, paired with a correct
    opponent sample when one exists, else with the gold SQL.  Questions
    whose samples are all correct contribute one reward-0 bookkeeping
    pair.
    """
    pairs: list[PreferencePair] = []
    for sample in val:
        key = sample.question
        draws = opponent.sample(key, rng, samples_per_question)
        rewards = [
            reward(ctx.classify(sample.db_id, sample.sql, d)) for d in draws
        ]
        correct = [d for d, r in zip(draws, rewards) if r == 0]
        incorrect = [d for d, r in zip(draws, rewards) if r == 1]
        if not incorrect:
            pairs.append(
                PreferencePair(key, correct[0], correct[0], 0, "opponent_correct")
            )
            continue
        if correct:
            y_plus, source = correct[0], "opponent_correct"
        else:
            y_plus, source = sample.sql, "gold_fallback"
        for y_minus in incorrect:
            pairs.append(PreferencePair(key, y_plus, y_minus, 1, source))
    return pairs


def _raw_argument(
    main: SoftmaxPolicy,
    opponent: SoftmaxPolicy,
    question: str,
    y_plus: str,
    y_minus: str,
    lam: float,
) -> float:
    """lam * [(log pm(y+) - log po(y+)) - (log pm(y-) - log po(y-))]."""
    delta_plus = main.log_prob(question, y_plus) - opponent.log_prob(question, y_plus)
    delta_minus = main.log_prob(question, y_minus) - opponent.log_prob(
        question, y_minus
    )
    return lam * (delta_plus - delta_minus)


def _pair_argument(
    main: SoftmaxPolicy, opponent: SoftmaxPolicy, pair: PreferencePair, lam: float
) -> float:
    if pair.reward == 0:
        return 0.0
    return _raw_argument(main, opponent, pair.question, pair.y_plus, pair.y_minus, lam)


def error_driven_loss(
    main: SoftmaxPolicy,
    opponent: SoftmaxPolicy,
    pairs: list[PreferencePair],
    lam: float = 1.0,
) -> tuple[float, list[float]]:
    """Mean logistic loss over the reward-gated log-ratio differences.

    Reward-0 pairs contribute exactly ln 2 each.
    """
    if not pairs:
        raise EmptyInput("no preference pairs")
    terms = [logistic_loss(_pair_argument(main, opponent, p, lam)) for p in pairs]
    return sum(terms) / len(terms), terms


def error_driven_grad(
    main: SoftmaxPolicy,
    opponent: SoftmaxPolicy,
    pairs: list[PreferencePair],
    lam: float = 1.0,
) -> dict[str, np.ndarray]:
    """Analytic gradient of the mean loss with respect to main's logits.

    Per pair: -sigmoid(-t) * lam * R * [grad log pm(y+) - grad log pm(y-)],
    averaged over pairs; reward-0 pairs contribute exactly zero.
    """
    if not pairs:
        raise EmptyInput("no preference pairs")
    grads: dict[str, np.ndarray] = {}
    scale = 1.0 / len(pairs)
    for pair in pairs:
        if pair.reward == 0:
            continue
        t = _pair_argument(main, opponent, pair, lam)
        coef = -sigmoid(-t) * lam * pair.reward * scale
        grad = grads.get(pair.question)
        if grad is None:
            grad = np.zeros(len(main.space.candidate_list(pair.question)))
            grads[pair.question] = grad
        # The softmax terms of the two grad-log-probs cancel exactly.
        grad[main.space.index_of(pair.question, pair.y_plus)] += coef
        grad[main.space.index_of(pair.question, pair.y_minus)] -= coef
    return grads


def dpo_loss(
    policy: SoftmaxPolicy,
    reference: SoftmaxPolicy,
    pairs: list[tuple[str, str, str]],
    beta: float = 1.0,
) -> float:
    """Standard preference loss: mean of -log sigmoid(beta * delta_r)."""
    if not pairs:
        raise EmptyInput("no preference pairs")
    total = 0.0
    for question, y_w, y_l in pairs:
        total += logistic_loss(beta * _dpo_delta(policy, reference, question, y_w, y_l))
    return total / len(pairs)


def _dpo_delta(policy, reference, question, y_w, y_l) -> float:
    ratio_w = policy.log_prob(question, y_w) - reference.log_prob(question, y_w)
    ratio_l = policy.log_prob(question, y_l) - reference.log_prob(question, y_l)
    return ratio_w - ratio_l


def dpo_logprob_grads(
    policy: SoftmaxPolicy,
    reference: SoftmaxPolicy,
    pair: tuple[str, str, str],
    beta: float = 1.0,
) -> tuple[float, float]:
    """(d loss / d log p(y_w), d loss / d log p(y_l)) for one pair.

    The y_l component is positive (so descent pushes log p(y_l) down)
    whenever sigmoid(-beta * delta_r) > 0, regardless of correctness.
    """
    question, y_w, y_l = pair
    delta = _dpo_delta(policy, reference, question, y_w, y_l)
    coef = beta * sigmoid(-beta * delta)
    return -coef, coef


def dpo_grad(
    policy: SoftmaxPolicy,
    reference: SoftmaxPolicy,
    pairs: list[tuple[str, str, str]],
    beta: float = 1.0,
) -> dict[str, np.ndarray]:
    """Gradient of dpo_loss with respect to the policy's logits."""
    if not pairs:
        raise EmptyInput("no preference pairs")
    grads: dict[str, np.ndarray] = {}
    scale = 1.0 / len(pairs)
    for question, y_w, y_l in pairs:
        delta = _dpo_delta(policy, reference, question, y_w, y_l)
        coef = -beta * sigmoid(-beta * delta) * scale
        grad = grads.get(question)
        if grad is None:
            grad = np.zeros(len(policy.space.candidate_list(question)))
            grads[question] = grad
        if y_w == y_l:
            continue
        grad[policy.space.index_of(question, y_w)] += coef
        grad[policy.space.index_of(question, y_l)] -= coef
    return grads


def spin_style_loss(
    main: SoftmaxPolicy,
    opponent: SoftmaxPolicy,
    pairs_from_gold: list[tuple[str, str, str]],
    lam: float = 1.0,
) -> float:
    """Degradation baseline: every opponent sample is treated as wrong.

    Same pairwise form as the error-driven loss, with the reward forced
    to 1 and (gold, opponent sample) pairs.  Opponent samples that are
    execution-correct still get penalized, which is exactly the failure
    mode the error-driven reward avoids.
    """
    if not pairs_from_gold:
        raise EmptyInput("no preference pairs")
    total = 0.0
    for question, y_gold, y_opp in pairs_from_gold:
        total += logistic_loss(
            _raw_argument(main, opponent, question, y_gold, y_opp, lam)
        )
    return total / len(pairs_from_gold)


def spin_style_grad(
    main: SoftmaxPolicy,
    opponent: SoftmaxPolicy,
    pairs_from_gold: list[tuple[str, str, str]],
    lam: float = 1.0,
) -> dict[str, np.ndarray]:
    """Gradient of spin_style_loss with respect to main's logits.

    Identical to the error-driven gradient with the reward pinned to 1:
    it raises the gold member and lowers the opponent sample even when
    the sample executes correctly.
    """
    if not pairs_from_gold:
        raise EmptyInput("no preference pairs")
    grads: dict[str, np.ndarray] = {}
    scale = 1.0 / len(pairs_from_gold)
    for question, y_gold, y_opp in pairs_from_gold:
        t = _raw_argument(main, opponent, question, y_gold, y_opp, lam)
        coef = -sigmoid(-t) * lam * scale
        grad = grads.get(question)
        if grad is None:
            grad = np.zeros(len(main.space.candidate_list(question)))
            grads[question] = grad
        grad[main.space.index_of(question, y_gold)] += coef
        grad[main.space.index_of(question, y_opp)] -= coef
    return grads


def select_main(pool: list[PolicyRecord]) -> PolicyRecord:
    """Highest validation accuracy; ties to earliest round then label."""
    if not pool:
        raise EmptyPool("empty policy pool")
    return min(pool, key=lambda r: (-r.val_accuracy, r.round, r.label))


def select_opponent(
    pool: list[PolicyRecord], excluded: str | None = None
) -> PolicyRecord:
    """Lowest validation accuracy, skipping the previously used opponent.

    The exclusion is waived when it would empty the pool.
    """
    if not pool:
        raise EmptyPool("empty policy pool")
    eligible = [r for r in pool if r.label != excluded]
    if not eligible:
        eligible = pool
    return min(eligible, key=lambda r: (r.val_accuracy, r.round, r.label))


def policy_val_accuracy(
    policy: SoftmaxPolicy, val: list[SynthSample], ctx: EvalContext
) -> float:
    """Execution accuracy of the policy's greedy predictions on val."""
    if not val:
        raise EmptyInput("empty validation set")
    correct = 0
    for sample in val:
        pred = policy.argmax_candidate(sample.question)
        if ctx.classify(sample.db_id, sample.sql, pred).kind == "correct":
            correct += 1
    return correct / len(val)


def self_play_round(
    pool: list[PolicyRecord],
    val: list[SynthSample],
    space: CandidateSpace,
    config: SelfPlayConfig,
    ctx: EvalContext,
    rng: np.random.Generator,
    round_index: int,
    excluded_opponent: str | None = None,
) -> tuple[list[PolicyRecord], RoundReport]:
    """One main/opponent selection, pair generation and optimization step.

    The optimized clone joins the pool; the pool never shrinks.
    """
    main = select_main(pool)
    opponent = select_opponent(pool, excluded_opponent)
    pairs = build_preference_pairs(
        opponent.policy, val, space, ctx, config.samples_per_question, rng
    )
    clone = main.policy.clone()
    clone.learning_rate = config.learning_rate
    for _ in range(config.gradient_steps):
        grads = error_driven_grad(clone, opponent.policy, pairs, config.lam)
        for question, grad in grads.items():
            clone.apply_gradient(question, grad)
    loss, _ = error_driven_loss(clone, opponent.policy, pairs, config.lam)
    accuracy = policy_val_accuracy(clone, val, ctx)
    record = PolicyRecord(clone, accuracy, round_index, f"selfplay-{round_index}")
    report = RoundReport(
        round=round_index,
        main=main.label,
        opponent=opponent.label,
        loss=loss,
        pairs_total=len(pairs),
        pairs_reward1=sum(p.reward for p in pairs),
        pairs_gold_fallback=sum(1 for p in pairs if p.source == "gold_fallback"),
        val_accuracy_before=main.val_accuracy,
        val_accuracy_after=accuracy,
    )
    return pool + [record], report


@dataclass
class SelfPlayResult:
    final: PolicyRecord
    rounds: list[RoundReport]
    pool: list[PolicyRecord] = field(default_factory=list)


def run_self_play(
    pool: list[PolicyRecord],
    val: list[SynthSample],
    space: CandidateSpace,
    config: SelfPlayConfig,
    ctx: EvalContext,
) -> SelfPlayResult:
    """Run max_iterations rounds and return the final best record.

    Fully deterministic under a fixed config seed; each round excludes
    the previous round's opponent from opponent selection.
    """
    if not pool:
        raise EmptyPool("empty policy pool")
    rng = np.random.default_rng(config.seed)
    reports: list[RoundReport] = []
    excluded: str | None = None
    current = list(pool)
    for round_index in range(1, config.max_iterations + 1):
        current, report = self_play_round(
            current, val, space, config, ctx, rng, round_index, excluded
        )
        reports.append(report)
        excluded = report.opponent
    return SelfPlayResult(select_main(current), reports, current)
