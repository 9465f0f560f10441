"""Schema-processing strategies producing the model-input serialization.

Three deterministic strategies: structured schema extraction (rank
tables/columns by lexical similarity to the question), context-aware
value matching (find database cell values quoted in the question), and
metadata augmentation (key relationships, types, comments).  Their
output serializes to a fixed text layout consumed as the canonical
model input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .executor import Database, execute
from .schema import DatabaseSchema

# Distinct-cell scan cap per column; keeps value matching bounded.
MAX_CELLS_PER_COLUMN = 100_000

_TOKEN_SPLIT_RE = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class SchemaContext:
    ranked_tables: tuple[tuple[str, float], ...]
    ranked_columns: tuple[tuple[str, tuple[tuple[str, float], ...]], ...]
    matched_values: tuple[tuple[str, str, str, str], ...]  # table, column, value, span
    metadata_lines: tuple[str, ...] = field(default_factory=tuple)


def _tokens(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT_RE.split(text.lower()) if t]


def _lcs_length(a: str, b: str) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for ch_a in a:
        cur = [0]
        for j, ch_b in enumerate(b, start=1):
            if ch_a == ch_b:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[len(b)]


def lcs_ratio(a: str, b: str) -> float:
    """Normalized longest-common-subsequence ratio in [0, 1]."""
    if not a or not b:
        return 0.0
    return 2.0 * _lcs_length(a, b) / (len(a) + len(b))


def _name_similarity(name: str, question_tokens: list[str]) -> float:
    if not question_tokens:
        return 0.0
    parts = _tokens(name) or [name.lower()]
    return max(
        (lcs_ratio(part, tok) for part in parts for tok in question_tokens),
        default=0.0,
    )


def extract_relevant_schema(
    question: str,
    schema: DatabaseSchema,
    top_k_tables: int = 5,
    top_k_columns: int = 8,
) -> tuple[
    tuple[tuple[str, float], ...],
    tuple[tuple[str, tuple[tuple[str, float], ...]], ...],
]:
    """Rank tables and per-table columns by similarity to the question.

    Ties keep declaration order; a table scores the max of its own name
    score and its column scores.
    """
    q_tokens = _tokens(question)
    table_entries: list[tuple[str, float]] = []
    column_entries: list[tuple[str, tuple[tuple[str, float], ...]]] = []
    for table in schema.tables:
        col_scores = [
            (col.name, _name_similarity(col.name, q_tokens)) for col in table.columns
        ]
        ranked_cols = sorted(col_scores, key=lambda item: -item[1])[:top_k_columns]
        table_score = max(
            [_name_similarity(table.name, q_tokens)] + [s for _, s in col_scores]
        )
        table_entries.append((table.name, table_score))
        column_entries.append((table.name, tuple(ranked_cols)))
    order = sorted(range(len(table_entries)), key=lambda i: -table_entries[i][1])
    keep = order[:top_k_tables]
    ranked_tables = tuple(table_entries[i] for i in keep)
    ranked_columns = tuple(column_entries[i] for i in keep)
    return ranked_tables, ranked_columns


def match_values(
    question: str,
    schema: DatabaseSchema,
    db: Database,
    max_matches: int = 10,
) -> tuple[tuple[str, str, str, str], ...]:
    """Find text-column cell values quoted verbatim in the question.

    A value matches when its token sequence appears contiguously among
    the question's tokens; matches sort by value length descending.
    """
    q_tokens = _tokens(question)
    if not q_tokens:
        return ()
    found: list[tuple[str, str, str, str]] = []
    for table in schema.tables:
        for col in table.columns:
            if col.data_type != "text":
                continue
            sql = (
                f'SELECT DISTINCT "{col.name}" FROM "{table.name}"'
                f' WHERE "{col.name}" IS NOT NULL ORDER BY 1'
                f" LIMIT {MAX_CELLS_PER_COLUMN}"
            )
            for (value,) in execute(db, sql).rows:
                if not isinstance(value, str):
                    continue
                v_tokens = _tokens(value)
                if v_tokens and _contains_subsequence(q_tokens, v_tokens):
                    span = " ".join(v_tokens)
                    found.append((table.name, col.name, value, span))
    found.sort(key=lambda item: -len(item[2]))
    return tuple(found[:max_matches])


def _contains_subsequence(haystack: list[str], needle: list[str]) -> bool:
    n = len(needle)
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def augment_metadata(schema: DatabaseSchema) -> tuple[str, ...]:
    """One line per column (type, pk, comment) plus one line per FK."""
    lines: list[str] = []
    for table in schema.tables:
        for col in table.columns:
            line = f"{table.name}.{col.name}: {col.data_type}"
            if col.is_primary_key:
                line += ", pk"
            if col.comment:
                line += f", {col.comment}"
            lines.append(line)
    for fk in schema.foreign_keys:
        lines.append(
            f"{fk.from_table}.{fk.from_column} references {fk.to_table}.{fk.to_column}"
        )
    return tuple(lines)


def build_context(
    question: str,
    schema: DatabaseSchema,
    db: Database,
    top_k_tables: int = 5,
    top_k_columns: int = 8,
    max_matches: int = 10,
) -> SchemaContext:
    ranked_tables, ranked_columns = extract_relevant_schema(
        question, schema, top_k_tables, top_k_columns
    )
    return SchemaContext(
        ranked_tables=ranked_tables,
        ranked_columns=ranked_columns,
        matched_values=match_values(question, schema, db, max_matches),
        metadata_lines=augment_metadata(schema),
    )


def serialize_context(question: str, ctx: SchemaContext) -> str:
    """Byte-exact canonical input text.

    Layout: a "/* schema */" block with one "table (score)" line per
    ranked table followed by indented "  column (score)" lines; a
    "/* values */" block with one "table.column = 'value' -- span" line
    per match; a "/* metadata */" block with the metadata lines; then
    "Question: <question>".  Scores print as %.3f.
    """
    out: list[str] = ["/* schema */"]
    columns_by_table = dict(ctx.ranked_columns)
    for table, score in ctx.ranked_tables:
        out.append(f"{table} ({score:.3f})")
        for col, col_score in columns_by_table.get(table, ()):
            out.append(f"  {col} ({col_score:.3f})")
    out.append("/* values */")
    for table, col, value, span in ctx.matched_values:
        out.append(f"{table}.{col} = '{value}' -- {span}")
    out.append("/* metadata */")
    out.extend(ctx.metadata_lines)
    out.append(f"Question: {question}")
    return "\n".join(out)
