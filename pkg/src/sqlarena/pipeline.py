"""Execution-verified synthesize/train/feedback rounds at toy scale.

Each round synthesizes fresh training data from the weighted template
pool, trains a fresh softmax policy on it, classifies the policy's
greedy predictions on a frozen validation split by execution, routes
correct (question, SQL) pairs into the renderer corpus, bumps the
source counts of templates behind failed samples so the next round
samples them more often, and records the policy in the model pool that
self-play later optimizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, IoError, NoCompatibleColumn, InstantiationFailed
from .executor import Database, EvalContext, ExecConfig
from .samples import SynthSample
from .schema import DatabaseSchema
from .selfplay import (
    PolicyRecord,
    SelfPlayConfig,
    SelfPlayResult,
    run_self_play,
)
from .synthesizer import instantiate, synthesize_dataset
from .template import SqlTemplate, TemplatePool, build_pool, extract_template
from .toypolicy import CandidateSpace, SoftmaxPolicy

_CONFIG_KEYS = {
    "seed": "seed",
    "n_train": "n_train",
    "n_val": "n_val",
    "rounds": "rounds",
    "selfplay_iterations": "selfplay_iterations",
    "lambda": "lam",
    "policy_learning_rate": "policy_learning_rate",
    "policy_epochs": "policy_epochs",
    "selfplay_learning_rate": "selfplay_learning_rate",
    "gradient_steps": "gradient_steps",
    "samples_per_question": "samples_per_question",
    "candidates_per_question": "candidates_per_question",
    "plateau_epsilon": "plateau_epsilon",
    "timeout_ms": "timeout_ms",
    "float_tolerance": "float_tolerance",
    "max_rows": "max_rows",
    "max_retries": "max_retries",
    "db": "db",
}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    n_train: int = 300
    n_val: int = 100
    rounds: int = 3
    selfplay_iterations: int = 5
    lam: float = 1.0
    policy_learning_rate: float = 0.5
    policy_epochs: int = 3
    selfplay_learning_rate: float = 0.05
    gradient_steps: int = 50
    samples_per_question: int = 4
    candidates_per_question: int = 8
    plateau_epsilon: float = 0.001
    timeout_ms: int = 5000
    float_tolerance: float = 1e-6
    max_rows: int = 10000
    max_retries: int = 20
    db: str | None = None

    def __post_init__(self) -> None:
        for name in ("n_train", "n_val", "rounds", "selfplay_iterations",
                     "policy_epochs", "gradient_steps", "samples_per_question",
                     "max_retries"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.candidates_per_question < 2:
            raise ValueError("candidates_per_question must be at least 2")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")

    @property
    def exec_config(self) -> ExecConfig:
        return ExecConfig(self.timeout_ms, self.float_tolerance, self.max_rows)

    def selfplay_config(self) -> SelfPlayConfig:
        return SelfPlayConfig(
            lam=self.lam,
            max_iterations=self.selfplay_iterations,
            samples_per_question=self.samples_per_question,
            learning_rate=self.selfplay_learning_rate,
            gradient_steps=self.gradient_steps,
            seed=self.seed + 1,
        )

    def to_dict(self) -> dict:
        out = {}
        for file_key, attr in _CONFIG_KEYS.items():
            out[file_key] = getattr(self, attr)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        kwargs = {}
        for key, value in raw.items():
            if key not in _CONFIG_KEYS:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[_CONFIG_KEYS[key]] = value
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        try:
            if path.endswith(".toml"):
                try:
                    import tomllib
                except ModuleNotFoundError:
                    import tomli as tomllib
                with open(path, "rb") as handle:
                    raw = tomllib.load(handle)
            else:
                with open(path, encoding="utf-8") as handle:
                    raw = json.load(handle)
        except OSError as exc:
            raise IoError(f"cannot read config {path!r}: {exc}") from exc
        except (json.JSONDecodeError, ValueError) as exc:
            raise FormatError(f"config {path!r} is malformed: {exc}") from exc
        if not isinstance(raw, dict):
            raise FormatError(f"config {path!r} must hold a table/object")
        return cls.from_dict(raw)


@dataclass
class RoundState:
    round: int
    template_pool: TemplatePool
    renderer_corpus: list[SynthSample]
    model_pool: list[PolicyRecord]
    metrics: dict
    val: list[SynthSample] | None = None
    space: CandidateSpace | None = None
    train_history: list[SynthSample] = field(default_factory=list)


def build_question_space(
    space: CandidateSpace,
    sample: SynthSample,
    schema: DatabaseSchema,
    db: Database,
    k: int,
    rng: np.random.Generator,
    config: ExecConfig = ExecConfig(),
) -> None:
    """Register gold plus up to k-1 same-template distractors for a question.

    Existing questions stay frozen so pool accuracies remain comparable
    across rounds.  Candidate order is shuffled so the gold index is not
    systematically first.
    """
    if sample.question in space.candidates:
        return
    template = extract_template(sample.sql, schema)
    distractors: list[str] = []
    attempts = 0
    while len(distractors) < k - 1 and attempts < 10 * k:
        attempts += 1
        try:
            candidate = instantiate(template, schema, db, rng, 5, config)
        except (InstantiationFailed, NoCompatibleColumn):
            break
        if candidate.sql != sample.sql and candidate.sql not in distractors:
            distractors.append(candidate.sql)
    if not distractors:
        # Last resort: a wrapper query that is distinct but executable.
        distractors.append(f"SELECT * FROM ({sample.sql})")
    candidates = [sample.sql] + distractors
    order = [int(i) for i in rng.permutation(len(candidates))]
    space.add_question(sample.question, [candidates[i] for i in order], sample.sql)


def _train_fresh_policy(
    space: CandidateSpace,
    train: list[SynthSample],
    learning_rate: float,
    epochs: int,
) -> SoftmaxPolicy:
    """Gradient steps on -log p(gold) over the synthetic train split."""
    policy = SoftmaxPolicy(space, learning_rate=learning_rate)
    for _ in range(epochs):
        for sample in train:
            key = sample.question
            if key not in space.candidates:
                continue
            if space.gold_sql(key) != sample.sql:
                continue  # colliding question text with a different gold
            policy.apply_gradient(key, -policy.grad_log_prob(key, sample.sql))
    return policy


def vbift_round(
    state: RoundState,
    schema: DatabaseSchema,
    db: Database,
    config: PipelineConfig,
    rng: np.random.Generator,
    ctx: EvalContext,
) -> RoundState:
    """One synthesize / train / verify / route-feedback round."""
    round_index = state.round + 1
    exec_config = config.exec_config
    pool = state.template_pool

    if state.val is None:
        batch = synthesize_dataset(
            pool, schema, db, config.n_train + config.n_val, rng,
            config.max_retries, exec_config,
        )
        train, val = batch[: config.n_train], batch[config.n_train :]
        space = CandidateSpace()
        for sample in val:
            build_question_space(
                space, sample, schema, db, config.candidates_per_question,
                rng, exec_config,
            )
    else:
        train = synthesize_dataset(
            pool, schema, db, config.n_train, rng, config.max_retries, exec_config
        )
        val, space = state.val, state.space
    for sample in train:
        build_question_space(
            space, sample, schema, db, config.candidates_per_question,
            rng, exec_config,
        )

    policy = _train_fresh_policy(
        space, train, config.policy_learning_rate, config.policy_epochs
    )

    new_corpus_entries: list[SynthSample] = []
    failed_bumps: dict[str, int] = {}
    correct = 0
    for sample in val:
        pred = policy.argmax_candidate(sample.question)
        verdict = ctx.classify(sample.db_id, sample.sql, pred)
        if verdict.kind == "correct":
            correct += 1
            new_corpus_entries.append(
                SynthSample(
                    question=sample.question,
                    sql=pred,
                    db_id=sample.db_id,
                    origin="synthetic",
                    template_id=sample.template_id,
                )
            )
        elif sample.template_id is not None:
            failed_bumps[sample.template_id] = failed_bumps.get(sample.template_id, 0) + 1

    new_pool = TemplatePool(
        tuple(
            SqlTemplate(
                t.skeleton, t.slots, t.source_count + failed_bumps.get(t.skeleton, 0)
            )
            for t in pool.templates
        ),
        pool.skipped,
    )
    accuracy = correct / len(val)
    record = PolicyRecord(policy, accuracy, round_index, f"vbift-{round_index}")
    metrics = {
        "phase": "vbift",
        "round": round_index,
        "n_train": len(train),
        "n_val": len(val),
        "val_accuracy": accuracy,
        "correct": correct,
        "failed": len(val) - correct,
        "failed_templates": failed_bumps,
        "pool_total": new_pool.total_count,
        "renderer_corpus_size": len(state.renderer_corpus) + len(new_corpus_entries),
    }
    return RoundState(
        round=round_index,
        template_pool=new_pool,
        renderer_corpus=state.renderer_corpus + new_corpus_entries,
        model_pool=state.model_pool + [record],
        metrics=metrics,
        val=val,
        space=space,
        train_history=state.train_history + train,
    )


class PlateauDetector:
    """Stop once accuracy improves by less than epsilon twice in a row."""

    def __init__(self, epsilon: float):
        self.epsilon = epsilon
        self._previous: float | None = None
        self._stalled = 0

    def update(self, accuracy: float) -> bool:
        if self._previous is not None:
            if accuracy - self._previous < self.epsilon:
                self._stalled += 1
            else:
                self._stalled = 0
        self._previous = accuracy
        return self._stalled >= 2


@dataclass
class PipelineResult:
    model_pool: list[PolicyRecord]
    trajectory: dict
    state: RoundState
    final: PolicyRecord
    selfplay: SelfPlayResult


def run_pipeline(
    schema: DatabaseSchema,
    db: Database,
    corpus: list[SynthSample],
    config: PipelineConfig,
) -> PipelineResult:
    """Seed templates, run feedback rounds, then hand the pool to self-play.

    Feedback rounds stop early once round-over-round validation accuracy
    improves by less than plateau_epsilon twice in a row.
    """
    rng = np.random.default_rng(config.seed)
    pool = build_pool(corpus, {s.db_id: schema for s in corpus})
    ctx = EvalContext({schema.db_id: db}, config.exec_config)
    state = RoundState(0, pool, [], [], {})
    vbift_rounds: list[dict] = []
    plateau = PlateauDetector(config.plateau_epsilon)
    for _ in range(config.rounds):
        state = vbift_round(state, schema, db, config, rng, ctx)
        vbift_rounds.append(state.metrics)
        if plateau.update(state.metrics["val_accuracy"]):
            break

    selfplay_result = run_self_play(
        state.model_pool, state.val, state.space, config.selfplay_config(), ctx
    )
    trajectory = {
        "config": config.to_dict(),
        "vbift": vbift_rounds,
        "selfplay": [report.to_dict() for report in selfplay_result.rounds],
        "final": {
            "label": selfplay_result.final.label,
            "val_accuracy": selfplay_result.final.val_accuracy,
        },
    }
    return PipelineResult(
        model_pool=selfplay_result.pool,
        trajectory=trajectory,
        state=state,
        final=selfplay_result.final,
        selfplay=selfplay_result,
    )


def remap_db_id(samples: list[SynthSample], db_id: str) -> list[SynthSample]:
    """Point corpus samples at a single schema's db_id."""
    return [replace(s, db_id=db_id) for s in samples]
