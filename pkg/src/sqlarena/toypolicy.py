"""Softmax policies over finite per-question SQL candidate spaces.

The parametric stand-in for a fine-tuned text-to-SQL model: exact
log-probabilities, seeded sampling, analytic gradients and plain
gradient-descent updates over one logit vector per question.  This is
what makes every loss formula in the self-play stage computable and
checkable in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, IoError, UnknownCandidate, UnknownQuestion


@dataclass
class CandidateSpace:
    """Ordered candidate SQL texts per question key; gold always included."""

    candidates: dict[str, list[str]] = field(default_factory=dict)
    gold_index: dict[str, int] = field(default_factory=dict)

    def add_question(self, key: str, candidates: list[str], gold_sql: str) -> None:
        if len(candidates) < 2:
            raise ValueError(f"question {key!r} needs at least 2 candidates")
        if len(set(candidates)) != len(candidates):
            raise ValueError(f"duplicate candidates for question {key!r}")
        if candidates.count(gold_sql) != 1:
            raise ValueError(f"gold must appear exactly once for question {key!r}")
        self.candidates[key] = list(candidates)
        self.gold_index[key] = candidates.index(gold_sql)

    def questions(self) -> list[str]:
        return list(self.candidates)

    def candidate_list(self, key: str) -> list[str]:
        if key not in self.candidates:
            raise UnknownQuestion(f"no candidates for question {key!r}")
        return self.candidates[key]

    def index_of(self, key: str, sql: str) -> int:
        cands = self.candidate_list(key)
        try:
            return cands.index(sql)
        except ValueError:
            raise UnknownCandidate(
                f"SQL is not a candidate for question {key!r}: {sql!r}"
            ) from None

    def gold_sql(self, key: str) -> str:
        return self.candidate_list(key)[self.gold_index[key]]

    def to_dict(self) -> dict:
        return {
            "questions": {
                key: {"candidates": cands, "gold": self.gold_index[key]}
                for key, cands in self.candidates.items()
            }
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CandidateSpace":
        space = cls()
        try:
            for key, entry in raw["questions"].items():
                cands = list(entry["candidates"])
                space.add_question(key, cands, cands[int(entry["gold"])])
        except (KeyError, TypeError, IndexError) as exc:
            raise FormatError(f"malformed candidate space: {exc}") from exc
        return space


class SoftmaxPolicy:
    """A softmax distribution per question over its candidate list."""

    def __init__(
        self,
        space: CandidateSpace,
        learning_rate: float = 0.05,
        logits: dict[str, np.ndarray] | None = None,
        version: int = 0,
    ):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.space = space
        self.learning_rate = learning_rate
        self.version = version
        self._logits: dict[str, np.ndarray] = {}
        if logits:
            for key, values in logits.items():
                self._logits[key] = np.asarray(values, dtype=np.float64).copy()

    def logits(self, question: str) -> np.ndarray:
        cands = self.space.candidate_list(question)
        existing = self._logits.get(question)
        if existing is None:
            existing = np.zeros(len(cands), dtype=np.float64)
            self._logits[question] = existing
        return existing

    def set_logits(self, question: str, values) -> None:
        cands = self.space.candidate_list(question)
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != (len(cands),):
            raise ValueError("logit vector length must match candidate count")
        if not np.all(np.isfinite(arr)):
            raise ValueError("logits must be finite")
        self._logits[question] = arr.copy()

    def log_probs(self, question: str) -> np.ndarray:
        """Log-softmax over the question's candidates, max-stabilized."""
        logits = self.logits(question)
        shifted = logits - logits.max()
        return shifted - np.log(np.exp(shifted).sum())

    def probs(self, question: str) -> np.ndarray:
        return np.exp(self.log_probs(question))

    def log_prob(self, question: str, sql: str) -> float:
        index = self.space.index_of(question, sql)
        return float(self.log_probs(question)[index])

    def grad_log_prob(self, question: str, sql: str) -> np.ndarray:
        """d log p(sql) / d logit_j = 1[j = sql] - softmax_j."""
        index = self.space.index_of(question, sql)
        grad = -self.probs(question)
        grad[index] += 1.0
        return grad

    def sample(self, question: str, rng: np.random.Generator, n: int) -> list[str]:
        cands = self.space.candidate_list(question)
        if n == 0:
            return []
        probs = self.probs(question)
        draws = rng.choice(len(cands), size=n, p=probs)
        return [cands[int(i)] for i in draws]

    def argmax_candidate(self, question: str) -> str:
        """Deterministic greedy prediction; ties break on lowest index."""
        cands = self.space.candidate_list(question)
        return cands[int(np.argmax(self.logits(question)))]

    def apply_gradient(self, question: str, grad) -> None:
        """Descend: logit_j -= learning_rate * grad_j; bumps the version."""
        logits = self.logits(question)
        if isinstance(grad, dict):
            for index, value in grad.items():
                if not 0 <= int(index) < len(logits):
                    raise UnknownCandidate(
                        f"gradient index {index} out of range for {question!r}"
                    )
                logits[int(index)] -= self.learning_rate * float(value)
        else:
            arr = np.asarray(grad, dtype=np.float64)
            if arr.shape != logits.shape:
                raise UnknownCandidate(
                    f"gradient length {arr.shape} does not match candidates"
                )
            logits -= self.learning_rate * arr
        self.version += 1

    def clone(self) -> "SoftmaxPolicy":
        return SoftmaxPolicy(
            self.space,
            self.learning_rate,
            logits={k: v.copy() for k, v in self._logits.items()},
            version=self.version,
        )

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "lr": self.learning_rate,
            "logits": {key: [float(v) for v in arr] for key, arr in self._logits.items()},
        }

    @classmethod
    def from_dict(cls, raw: dict, space: CandidateSpace) -> "SoftmaxPolicy":
        try:
            return cls(
                space,
                learning_rate=float(raw["lr"]),
                logits={k: np.asarray(v, dtype=np.float64) for k, v in raw["logits"].items()},
                version=int(raw["version"]),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed policy checkpoint: {exc}") from exc


def save_policy(policy: SoftmaxPolicy, path: str, extra: dict | None = None) -> None:
    record = policy.to_dict()
    if extra:
        record.update(extra)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(record, handle, indent=2)
        handle.write("\n")


def load_policy(path: str, space: CandidateSpace) -> tuple[SoftmaxPolicy, dict]:
    try:
        with open(path, encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise IoError(f"cannot read policy file {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"policy file {path!r} is not valid JSON: {exc}") from exc
    policy = SoftmaxPolicy.from_dict(raw, space)
    extra = {k: v for k, v in raw.items() if k not in ("version", "lr", "logits")}
    return policy, extra
