"""SQL execution, result comparison and execution-accuracy metrics.

Runs read-only SELECTs against embedded SQLite files, compares result
tables with bag semantics (order-sensitive only when the gold query has
a top-level ORDER BY), classifies predictions as correct / incorrect /
exec_error, and derives the EX and simplified all-variants TS accuracy
metrics from those verdicts.
"""

from __future__ import annotations

import re
import sqlite3
import time
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import (
    EmptyInput,
    GoldExecFailed,
    IoError,
    ParseError,
    SqlArenaError,
    SqlRuntimeError,
    SqlSyntaxError,
    SqlTimeout,
    UnknownDatabase,
    WriteRejected,
)
from .samples import SynthSample
from .sqltokens import has_top_level_order_by, tokenize

Cell = None | int | float | str
Row = tuple[Cell, ...]

# Progress-handler granularity; small enough to honor millisecond budgets.
_PROGRESS_OPCODES = 500

_FIRST_WORD_RE = re.compile(r"\s*([A-Za-z_]+)")


@dataclass(frozen=True)
class ExecConfig:
    timeout_ms: int = 5000
    float_tolerance: float = 1e-6
    max_rows: int = 10000

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.max_rows < 1:
            raise ValueError("max_rows must be at least 1")
        if self.float_tolerance < 0:
            raise ValueError("float_tolerance must be nonnegative")


@dataclass(frozen=True)
class ResultTable:
    column_count: int
    rows: tuple[Row, ...]
    truncated: bool = False

    def __post_init__(self) -> None:
        for row in self.rows:
            if len(row) != self.column_count:
                raise ValueError("row width does not match column_count")


@dataclass(frozen=True)
class Verdict:
    kind: str  # correct | incorrect | exec_error
    error_detail: str | None = None

    def __post_init__(self) -> None:
        if (self.kind == "exec_error") != (self.error_detail is not None):
            raise ValueError("error_detail present iff kind is exec_error")


class Database:
    """Read-only handle to a single-file SQLite database."""

    def __init__(self, path: str):
        self.path = str(path)
        try:
            self._conn = sqlite3.connect(f"file:{self.path}?mode=ro", uri=True)
        except sqlite3.Error as exc:
            raise IoError(f"cannot open database {path!r}: {exc}") from exc

    @property
    def connection(self) -> sqlite3.Connection:
        return self._conn

    def close(self) -> None:
        self._conn.close()


def _reject_non_select(sql: str) -> None:
    try:
        tokens = tokenize(sql)
    except ParseError:
        # Tokenizer is narrower than the engine; fall back to a word check.
        match = _FIRST_WORD_RE.match(sql)
        word = match.group(1).lower() if match else ""
        if word not in ("select", "with"):
            raise WriteRejected(f"not a SELECT statement: starts with {word!r}")
        return
    if tokens and tokens[-1].text == ";":
        tokens = tokens[:-1]
    if not tokens:
        raise WriteRejected("empty statement")
    if any(tok.text == ";" for tok in tokens):
        raise WriteRejected("multiple statements are not allowed")
    if not tokens[0].is_kw("select", "with"):
        raise WriteRejected(f"not a SELECT statement: starts with {tokens[0].text!r}")


def _canonical_cell(value: object) -> Cell:
    if isinstance(value, bytes):
        return value.decode("utf-8", errors="replace")
    if value is None or isinstance(value, (int, float, str)):
        return value
    return str(value)


def execute(db: Database, sql: str, config: ExecConfig = ExecConfig()) -> ResultTable:
    """Run a single read-only SELECT and collect up to max_rows rows."""
    _reject_non_select(sql)
    conn = db.connection
    deadline = time.monotonic() + config.timeout_ms / 1000.0
    conn.set_progress_handler(
        lambda: 1 if time.monotonic() > deadline else 0, _PROGRESS_OPCODES
    )
    try:
        cursor = conn.execute(sql)
        fetched = cursor.fetchmany(config.max_rows + 1)
    except sqlite3.Warning as exc:
        raise WriteRejected(str(exc)) from exc
    except sqlite3.OperationalError as exc:
        message = str(exc)
        if "interrupted" in message:
            raise SqlTimeout(f"query exceeded {config.timeout_ms} ms") from exc
        if "syntax error" in message:
            raise SqlSyntaxError(message) from exc
        raise SqlRuntimeError(message) from exc
    except sqlite3.Error as exc:
        raise SqlRuntimeError(str(exc)) from exc
    finally:
        conn.set_progress_handler(None, 0)
    truncated = len(fetched) > config.max_rows
    rows = tuple(
        tuple(_canonical_cell(cell) for cell in row)
        for row in fetched[: config.max_rows]
    )
    width = len(cursor.description) if cursor.description else 0
    return ResultTable(width, rows, truncated)


def _cells_equal(a: Cell, b: Cell, tolerance: float) -> bool:
    if a is None or b is None:
        return a is None and b is None
    a_num = isinstance(a, (int, float))
    b_num = isinstance(b, (int, float))
    if a_num != b_num:
        return False
    if a_num:
        return abs(float(a) - float(b)) <= tolerance
    return a == b


def _rows_equal(a: Row, b: Row, tolerance: float) -> bool:
    return len(a) == len(b) and all(_cells_equal(x, y, tolerance) for x, y in zip(a, b))


def results_equal(
    a: ResultTable,
    b: ResultTable,
    order_sensitive: bool = False,
    float_tolerance: float = 1e-6,
) -> bool:
    """Compare result tables positionally, ignoring column names.

    Rows compare as a sequence when order_sensitive, otherwise as a
    multiset.  Numbers compare within float_tolerance; null equals only
    null; text compares verbatim.
    """
    if a.column_count != b.column_count or len(a.rows) != len(b.rows):
        return False
    if order_sensitive:
        return all(_rows_equal(x, y, float_tolerance) for x, y in zip(a.rows, b.rows))
    if float_tolerance == 0 or (not _any_floats(a.rows) and not _any_floats(b.rows)):
        return Counter(a.rows) == Counter(b.rows)
    # Tolerance-aware multiset match: greedy pairing over unused rows.
    unused = list(b.rows)
    for row in a.rows:
        for i, other in enumerate(unused):
            if _rows_equal(row, other, float_tolerance):
                del unused[i]
                break
        else:
            return False
    return True


def _any_floats(rows: Iterable[Row]) -> bool:
    return any(isinstance(cell, float) for row in rows for cell in row)


def classify(
    db: Database, gold_sql: str, pred_sql: str, config: ExecConfig = ExecConfig()
) -> Verdict:
    """Execution-based classification of a prediction against its gold."""
    try:
        gold_result = execute(db, gold_sql, config)
    except SqlArenaError as exc:
        raise GoldExecFailed(f"gold query failed: {exc}") from exc
    order_sensitive = has_top_level_order_by(gold_sql)
    try:
        pred_result = execute(db, pred_sql, config)
    except (SqlSyntaxError, SqlRuntimeError, SqlTimeout, WriteRejected) as exc:
        return Verdict("exec_error", str(exc))
    equal = results_equal(
        pred_result, gold_result, order_sensitive, config.float_tolerance
    )
    return Verdict("correct" if equal else "incorrect")


def ex_accuracy(
    db_lookup: dict[str, Database],
    samples: Sequence[tuple[SynthSample, str]],
    config: ExecConfig = ExecConfig(),
) -> float:
    """Fraction of predictions classified correct; errors count as wrong."""
    if not samples:
        raise EmptyInput("no samples to evaluate")
    correct = 0
    for sample, pred_sql in samples:
        db = db_lookup.get(sample.db_id)
        if db is None:
            raise UnknownDatabase(f"no database registered for {sample.db_id!r}")
        if classify(db, sample.sql, pred_sql, config).kind == "correct":
            correct += 1
    return correct / len(samples)


def ts_accuracy(
    db_variants: Sequence[Database],
    samples: Sequence[tuple[SynthSample, str]],
    config: ExecConfig = ExecConfig(),
) -> float:
    """Simplified test-suite accuracy: correct on every database variant."""
    if not db_variants:
        raise EmptyInput("no database variants")
    if not samples:
        raise EmptyInput("no samples to evaluate")
    passing = 0
    for sample, pred_sql in samples:
        if all(
            classify(db, sample.sql, pred_sql, config).kind == "correct"
            for db in db_variants
        ):
            passing += 1
    return passing / len(samples)


class EvalContext:
    """Databases plus a verdict cache for repeated classifications.

    Self-play re-classifies the same (gold, prediction) pairs many times
    per run; the cache keeps that cost proportional to distinct pairs.
    """

    def __init__(
        self, db_lookup: dict[str, Database], config: ExecConfig = ExecConfig()
    ):
        self.db_lookup = dict(db_lookup)
        self.config = config
        self._cache: dict[tuple[str, str, str], Verdict] = {}

    def database(self, db_id: str) -> Database:
        db = self.db_lookup.get(db_id)
        if db is None:
            raise UnknownDatabase(f"no database registered for {db_id!r}")
        return db

    def classify(self, db_id: str, gold_sql: str, pred_sql: str) -> Verdict:
        key = (db_id, gold_sql, pred_sql)
        verdict = self._cache.get(key)
        if verdict is None:
            verdict = classify(self.database(db_id), gold_sql, pred_sql, self.config)
            self._cache[key] = verdict
        return verdict
