"""The (question, gold SQL, database id) sample type and its JSONL forms."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import FormatError, IoError


@dataclass(frozen=True)
class SynthSample:
    """One question/SQL pair; the unit of synthetic and evaluation data."""

    question: str
    sql: str
    db_id: str
    origin: str = "synthetic"  # synthetic | corpus
    template_id: str | None = None
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.question:
            raise ValueError("question must be nonempty")
        if self.origin not in ("synthetic", "corpus"):
            raise ValueError(f"unknown origin {self.origin!r}")


def sample_to_dict(sample: SynthSample) -> dict:
    out = {
        "question": sample.question,
        "sql": sample.sql,
        "db_id": sample.db_id,
        "origin": sample.origin,
        "template_skeleton": sample.template_id,
    }
    if sample.seed is not None:
        out["seed"] = sample.seed
    return out


def write_samples_jsonl(samples: list[SynthSample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(json.dumps(sample_to_dict(sample), ensure_ascii=False))
            handle.write("\n")


def read_samples_jsonl(path: str) -> list[SynthSample]:
    """Read corpus/dataset lines: {"question", "sql", "db_id", ...}."""
    samples: list[SynthSample] = []
    for line_no, record in _iter_jsonl(path):
        try:
            samples.append(
                SynthSample(
                    question=record.get("question") or "?",
                    sql=record["sql"],
                    db_id=record["db_id"],
                    origin=record.get("origin", "corpus"),
                    template_id=record.get("template_skeleton"),
                    seed=record.get("seed"),
                )
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}:{line_no}: bad sample record: {exc}") from exc
    return samples


def read_predictions_jsonl(path: str) -> list[tuple[SynthSample, str]]:
    """Read prediction lines: {"db_id", "question", "gold_sql", "pred_sql"}."""
    pairs: list[tuple[SynthSample, str]] = []
    for line_no, record in _iter_jsonl(path):
        try:
            sample = SynthSample(
                question=record.get("question") or "?",
                sql=record["gold_sql"],
                db_id=record["db_id"],
                origin="corpus",
            )
            pairs.append((sample, record["pred_sql"]))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}:{line_no}: bad prediction record: {exc}") from exc
    return pairs


def _iter_jsonl(path: str):
    try:
        with open(path, encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
                if not isinstance(record, dict):
                    raise FormatError(f"{path}:{line_no}: expected a JSON object")
                yield line_no, record
    except OSError as exc:
        raise IoError(f"cannot read {path!r}: {exc}") from exc
