"""SQL template extraction and the training-distribution-weighted pool.

A template is a query skeleton with schema mentions normalized away:
column references become typed placeholders (col_<type>_<n>, with a
_key_fk infix when the column participates in a foreign key), literals
become [NUM] / [STR] / [TIME] / [BOOL] value slots, and the FROM and
JOIN clauses are removed entirely, which makes the skeleton independent
of concrete table names.  Extraction is a deterministic token-stream
pass; SELECT / WHERE / GROUP BY / HAVING / ORDER BY / LIMIT structure,
aggregates, operators and set operations pass through verbatim.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllItemsFailed,
    EmptyPool,
    FormatError,
    IoError,
    ParseError,
    SqlArenaError,
    UnresolvedColumn,
    UnsupportedStatement,
)
from .samples import SynthSample
from .schema import ColumnDef, DatabaseSchema
from .sqltokens import (
    CLAUSE_STARTERS,
    SET_OPS,
    Token,
    looks_like_time,
    matching_paren,
    render,
    strip_terminator,
    tokenize,
    top_level_positions,
)

logger = logging.getLogger(__name__)

_VALUE_TOKEN_BY_TYPE = {
    "number": "[NUM]",
    "text": "[STR]",
    "time": "[TIME]",
    "boolean": "[BOOL]",
}
VALUE_TYPE_BY_TOKEN = {v: k for k, v in _VALUE_TOKEN_BY_TYPE.items()}

_JOIN_WORDS = ("join", "inner", "left", "right", "full", "cross", "outer")


@dataclass(frozen=True)
class Slot:
    id: int  # ordinal within template, consecutive from 1 per kind
    kind: str  # column | value
    data_type: str
    is_fk: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("column", "value"):
            raise ValueError(f"unknown slot kind {self.kind!r}")
        if self.is_fk and self.kind != "column":
            raise ValueError("only column slots can be foreign-key slots")

    @property
    def signature(self) -> tuple[str, str, bool]:
        return (self.kind, self.data_type, self.is_fk)


@dataclass(frozen=True)
class SqlTemplate:
    skeleton: str
    slots: tuple[Slot, ...]
    source_count: int = 1

    @property
    def key(self) -> tuple[str, tuple[tuple[str, str, bool], ...]]:
        return (self.skeleton, tuple(s.signature for s in self.slots))

    def column_slots(self) -> list[Slot]:
        return [s for s in self.slots if s.kind == "column"]

    def value_slots(self) -> list[Slot]:
        return [s for s in self.slots if s.kind == "value"]


@dataclass(frozen=True)
class TemplatePool:
    templates: tuple[SqlTemplate, ...]
    skipped: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        keys = [t.key for t in self.templates]
        if len(set(keys)) != len(keys):
            raise FormatError("duplicate templates in pool")

    @property
    def total_count(self) -> int:
        return sum(t.source_count for t in self.templates)


class _Extraction:
    """Mutable state threaded through one extraction pass."""

    def __init__(self, schema: DatabaseSchema):
        self.schema = schema
        self.fk_cols = {
            (t.lower(), c.lower()) for t, c in schema.fk_participants()
        }
        self.counters: dict[tuple[str, bool], int] = {}
        self.slots: list[Slot] = []
        self.n_columns = 0
        self.n_values = 0

    def column_token(self, table: str, col: ColumnDef) -> Token:
        fk = (table.lower(), col.name.lower()) in self.fk_cols
        family = (col.data_type, fk)
        ordinal = self.counters.get(family, 0) + 1
        self.counters[family] = ordinal
        self.n_columns += 1
        self.slots.append(Slot(self.n_columns, "column", col.data_type, fk))
        infix = "_key_fk" if fk else ""
        return Token("ident", f"col_{col.data_type}{infix}_{ordinal}")

    def value_token(self, data_type: str) -> Token:
        self.n_values += 1
        self.slots.append(Slot(self.n_values, "value", data_type))
        return Token("vslot", _VALUE_TOKEN_BY_TYPE[data_type])


def extract_template(sql: str, schema: DatabaseSchema) -> SqlTemplate:
    """Normalize one SELECT statement into a table-independent template."""
    tokens = strip_terminator(tokenize(sql))
    if not tokens:
        raise ParseError("empty statement")
    if tokens[0].is_kw("with"):
        raise UnsupportedStatement("WITH statements cannot be templated")
    if not (tokens[0].is_kw("select") or tokens[0].text == "("):
        raise UnsupportedStatement(
            f"only SELECT statements can be templated, got {tokens[0].text!r}"
        )
    state = _Extraction(schema)
    out = _normalize_compound(tokens, 0, len(tokens), [], {}, state)
    return SqlTemplate(render(out), tuple(state.slots))


def _normalize_compound(
    tokens: list[Token],
    lo: int,
    hi: int,
    outer_tables: list[str],
    outer_aliases: dict[str, str],
    state: _Extraction,
) -> list[Token]:
    """Normalize a possibly set-op-joined chain of SELECT members."""
    out: list[Token] = []
    prev = lo
    for pos in top_level_positions(tokens, lo, hi, SET_OPS):
        out.extend(
            _normalize_member(tokens, prev, pos, outer_tables, outer_aliases, state)
        )
        out.append(tokens[pos])
        prev = pos + 1
        if prev < hi and tokens[prev].is_kw("all"):
            out.append(tokens[prev])
            prev += 1
    out.extend(_normalize_member(tokens, prev, hi, outer_tables, outer_aliases, state))
    return out


def _normalize_member(
    tokens: list[Token],
    lo: int,
    hi: int,
    outer_tables: list[str],
    outer_aliases: dict[str, str],
    state: _Extraction,
) -> list[Token]:
    if lo >= hi:
        raise ParseError("empty SELECT member")
    if tokens[lo].text == "(":
        close = matching_paren(tokens, lo)
        if close == hi - 1 and lo + 1 < close and tokens[lo + 1].is_kw("select"):
            inner = _normalize_compound(
                tokens, lo + 1, close, outer_tables, outer_aliases, state
            )
            return [tokens[lo], *inner, tokens[close]]
        raise ParseError("parenthesized member must wrap a SELECT")
    if tokens[lo].is_kw("with"):
        raise UnsupportedStatement("WITH statements cannot be templated")
    if not tokens[lo].is_kw("select"):
        raise UnsupportedStatement(
            f"expected SELECT, found {tokens[lo].text!r}"
        )

    clause_pos: dict[str, int] = {}
    for i in top_level_positions(tokens, lo + 1, hi, set(CLAUSE_STARTERS)):
        word = tokens[i].text.lower()
        if word in ("group", "order"):
            if i + 1 >= hi or not tokens[i + 1].is_kw("by"):
                raise ParseError(f"{word.upper()} not followed by BY")
        clause_pos.setdefault(word, i)
    boundaries = sorted(clause_pos.values())

    def clause_end(start: int) -> int:
        for b in boundaries:
            if b > start:
                return b
        return hi

    from_span: tuple[int, int] | None = None
    scope_tables: list[str] = []
    alias_map = dict(outer_aliases)
    if "from" in clause_pos:
        f_lo = clause_pos["from"]
        f_hi = clause_end(f_lo)
        from_span = (f_lo, f_hi)
        for table, alias in _parse_from(tokens, f_lo + 1, f_hi, state.schema):
            scope_tables.append(table)
            alias_map[table.lower()] = table
            if alias:
                alias_map[alias.lower()] = table

    select_end = boundaries[0] if boundaries else hi
    limit_pos = clause_pos.get("limit")
    visible_tables = scope_tables + [t for t in outer_tables if t not in scope_tables]

    out: list[Token] = []
    select_aliases: set[str] = set()
    i = lo
    while i < hi:
        if from_span and from_span[0] <= i < from_span[1]:
            i = from_span[1]
            continue
        tok = tokens[i]
        in_select_list = lo < i < select_end
        slot_literals = limit_pos is None or i < limit_pos

        if tok.text == "(":
            close = matching_paren(tokens, i)
            if i + 1 < close and tokens[i + 1].is_kw("select"):
                out.append(tok)
                out.extend(
                    _normalize_compound(
                        tokens, i + 1, close, visible_tables, alias_map, state
                    )
                )
                out.append(tokens[close])
                i = close + 1
                continue
            out.append(tok)
            i += 1
            continue

        if tok.kind == "number":
            out.append(state.value_token("number") if slot_literals else tok)
            i += 1
            continue
        if tok.kind == "string":
            if slot_literals:
                kind = "time" if looks_like_time(tok.string_value) else "text"
                out.append(state.value_token(kind))
            else:
                out.append(tok)
            i += 1
            continue

        if tok.kind in ("ident", "qident"):
            keyword = tok.keyword
            if keyword in ("true", "false"):
                out.append(state.value_token("boolean") if slot_literals else tok)
                i += 1
                continue
            if keyword == "as":
                out.append(tok)
                if i + 1 < hi and tokens[i + 1].kind in ("ident", "qident"):
                    out.append(tokens[i + 1])
                    if in_select_list:
                        select_aliases.add(tokens[i + 1].ident_value.lower())
                    i += 2
                else:
                    i += 1
                continue
            if keyword is not None:
                out.append(tok)
                i += 1
                continue
            # Function call: keep the name verbatim.
            if i + 1 < hi and tokens[i + 1].text == "(":
                out.append(tok)
                i += 1
                continue
            # Qualified column reference.
            if i + 1 < hi and tokens[i + 1].text == ".":
                if i + 2 >= hi or tokens[i + 2].kind not in ("ident", "qident"):
                    raise ParseError(f"dangling qualifier {tok.text!r}")
                table = alias_map.get(tok.ident_value.lower())
                if table is None:
                    raise UnresolvedColumn(
                        f"unknown table or alias {tok.ident_value!r}"
                    )
                name = tokens[i + 2].ident_value
                col = state.schema.table(table).column(name)
                if col is None:
                    raise UnresolvedColumn(f"no column {table}.{name}")
                out.append(state.column_token(table, col))
                i += 3
                continue
            # Bare identifier: first table whose columns match, else alias.
            resolved: tuple[str, ColumnDef] | None = None
            for table in visible_tables:
                col = state.schema.table(table).column(tok.ident_value)
                if col is not None:
                    resolved = (table, col)
                    break
            if resolved is not None:
                out.append(state.column_token(*resolved))
            elif tok.ident_value.lower() in select_aliases:
                out.append(tok)
            else:
                raise UnresolvedColumn(
                    f"cannot resolve identifier {tok.ident_value!r}"
                )
            i += 1
            continue

        out.append(tok)
        i += 1
    return out


def _parse_from(
    tokens: list[Token], lo: int, hi: int, schema: DatabaseSchema
) -> list[tuple[str, str | None]]:
    """Parse FROM table references; returns (canonical name, alias) pairs."""
    tables: list[tuple[str, str | None]] = []
    i = lo
    expect_table = True
    while i < hi:
        tok = tokens[i]
        if expect_table:
            if tok.text == "(":
                raise ParseError("derived tables in FROM are not supported")
            if tok.kind not in ("ident", "qident") or tok.keyword is not None:
                raise ParseError(f"expected table name, found {tok.text!r}")
            name = tok.ident_value
            if not schema.has_table(name):
                raise UnresolvedColumn(f"unknown table {name!r}")
            canonical = schema.table(name).name
            alias = None
            j = i + 1
            if j < hi and tokens[j].is_kw("as"):
                j += 1
                if j >= hi or tokens[j].kind not in ("ident", "qident"):
                    raise ParseError("expected alias after AS")
                alias = tokens[j].ident_value
                j += 1
            elif (
                j < hi
                and tokens[j].kind in ("ident", "qident")
                and tokens[j].keyword is None
            ):
                alias = tokens[j].ident_value
                j += 1
            tables.append((canonical, alias))
            expect_table = False
            i = j
            continue
        if tok.text == ",":
            expect_table = True
            i += 1
        elif tok.keyword in _JOIN_WORDS:
            while i < hi and not tokens[i].is_kw("join"):
                i += 1
            if i >= hi:
                raise ParseError("malformed JOIN")
            i += 1
            expect_table = True
        elif tok.keyword == "on":
            # The ON condition is dropped with the clause; skip it.
            i += 1
            depth = 0
            while i < hi:
                text = tokens[i].text
                if text == "(":
                    depth += 1
                elif text == ")":
                    depth -= 1
                elif depth == 0 and (
                    text == "," or tokens[i].keyword in _JOIN_WORDS
                ):
                    break
                i += 1
        elif tok.keyword == "using":
            if i + 1 < hi and tokens[i + 1].text == "(":
                i = matching_paren(tokens, i + 1) + 1
            else:
                raise ParseError("malformed USING clause")
        else:
            raise ParseError(f"unexpected token in FROM clause: {tok.text!r}")
    if not tables:
        raise ParseError("empty FROM clause")
    return tables


def build_pool(
    corpus: list[SynthSample], schema_lookup: dict[str, DatabaseSchema]
) -> TemplatePool:
    """Extract and deduplicate templates over a corpus.

    Items that fail to parse are skipped and reported on the pool; the
    pool is empty only if everything failed, which raises.
    """
    if not corpus:
        raise AllItemsFailed("empty corpus")
    counts: dict[tuple, int] = {}
    order: dict[tuple, SqlTemplate] = {}
    skipped: list[str] = []
    for sample in corpus:
        schema = schema_lookup.get(sample.db_id)
        if schema is None:
            skipped.append(f"{sample.db_id}: no schema available")
            continue
        try:
            template = extract_template(sample.sql, schema)
        except SqlArenaError as exc:
            skipped.append(f"{sample.sql!r}: {exc}")
            logger.debug("skipping corpus item %r: %s", sample.sql, exc)
            continue
        key = template.key
        counts[key] = counts.get(key, 0) + 1
        order.setdefault(key, template)
    if not order:
        raise AllItemsFailed(f"no corpus item yielded a template ({len(skipped)} skipped)")
    templates = tuple(
        SqlTemplate(t.skeleton, t.slots, counts[key]) for key, t in order.items()
    )
    return TemplatePool(templates, tuple(skipped))


def sample_template(pool: TemplatePool, rng: np.random.Generator) -> SqlTemplate:
    """Draw a template with probability source_count / total_count."""
    if not pool.templates:
        raise EmptyPool("template pool is empty")
    target = int(rng.integers(0, pool.total_count))
    acc = 0
    for template in pool.templates:
        acc += template.source_count
        if target < acc:
            return template
    raise AssertionError("unreachable: counts sum to total_count")


def pool_to_dict(pool: TemplatePool) -> dict:
    return {
        "templates": [
            {
                "skeleton": t.skeleton,
                "slots": [
                    {"kind": s.kind, "type": s.data_type, "fk": s.is_fk}
                    for s in t.slots
                ],
                "count": t.source_count,
            }
            for t in pool.templates
        ]
    }


def pool_from_dict(raw: dict) -> TemplatePool:
    try:
        templates = []
        for entry in raw["templates"]:
            slots: list[Slot] = []
            n_col = n_val = 0
            for s in entry["slots"]:
                if s["kind"] == "column":
                    n_col += 1
                    slots.append(Slot(n_col, "column", s["type"], bool(s["fk"])))
                else:
                    n_val += 1
                    slots.append(Slot(n_val, "value", s["type"]))
            templates.append(
                SqlTemplate(entry["skeleton"], tuple(slots), int(entry["count"]))
            )
        return TemplatePool(tuple(templates))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed template pool: {exc}") from exc


def save_pool(pool: TemplatePool, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(pool_to_dict(pool), handle, indent=2)
        handle.write("\n")


def load_pool(path: str) -> TemplatePool:
    try:
        with open(path, encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise IoError(f"cannot read pool file {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"pool file {path!r} is not valid JSON: {exc}") from exc
    return pool_from_dict(raw)
