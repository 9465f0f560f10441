"""Template instantiation against a target database.

Instantiation fills a template's typed column slots with schema columns
(weighted by foreign-key distance to already-selected tables), fills
value slots with cell values sampled from the database, reconstructs a
FROM/JOIN clause from foreign-key paths, renders a deterministic
English question for the SQL, and validates the result by executing it.
"""

from __future__ import annotations

import re
from collections import deque

import numpy as np

from .errors import (
    DisconnectedTables,
    ExhaustedCandidates,
    InstantiationFailed,
    NoCompatibleColumn,
    NoValuesAvailable,
    ParseError,
    SqlRuntimeError,
    SqlSyntaxError,
    SqlTimeout,
    SynthesisStalled,
)
from .executor import Database, ExecConfig, execute
from .samples import SynthSample
from .schema import DatabaseSchema, columns_of_type
from .sqltokens import (
    CLAUSE_STARTERS,
    SET_OPS,
    Token,
    matching_paren,
    quote_string,
    render,
    strip_terminator,
    tokenize,
    top_level_positions,
)
from .template import VALUE_TYPE_BY_TOKEN, SqlTemplate, TemplatePool, sample_template

COLUMN_PLACEHOLDER_RE = re.compile(
    r"^col_(number|text|time|boolean|other)(_key_fk)?_(\d+)$"
)

# Weight floor for candidates with no FK path to any selected table.
EPSILON_WEIGHT = 0.01


def select_columns(
    template: SqlTemplate, schema: DatabaseSchema, rng: np.random.Generator
) -> dict[int, tuple[str, str]]:
    """Fill column slots one at a time, weighting by schema distance.

    A candidate from an already-selected table gets weight 1; otherwise
    its weight accumulates 1/(1+d) per step, d being the FK hop count to
    the nearest selected table (a small floor when disconnected).  The
    first slot draws uniformly.  No column fills two slots.
    """
    fk_cols = schema.fk_participants()
    distances = _DistanceCache(schema)
    weights: dict[tuple[str, str], float] = {}
    selected_tables: list[str] = []
    used: set[tuple[str, str]] = set()
    chosen: dict[int, tuple[str, str]] = {}

    for slot in template.column_slots():
        cands = [
            (table, col.name)
            for table, col in columns_of_type(schema, slot.data_type)
            if ((table, col.name) in fk_cols) == slot.is_fk
        ]
        if not cands:
            kind = "foreign-key " if slot.is_fk else ""
            raise NoCompatibleColumn(
                f"no {kind}column of type {slot.data_type!r} in schema"
            )
        available = [c for c in cands if c not in used]
        if not available:
            raise ExhaustedCandidates(
                f"all {slot.data_type!r} columns already assigned"
            )
        if not selected_tables:
            pick = available[int(rng.integers(len(available)))]
        else:
            for cand in available:
                table = cand[0]
                if table in selected_tables:
                    weights[cand] = 1.0
                else:
                    finite = [
                        d
                        for d in (
                            distances.get(table, sel) for sel in selected_tables
                        )
                        if d is not None
                    ]
                    bump = 1.0 / (1.0 + min(finite)) if finite else EPSILON_WEIGHT
                    weights[cand] = weights.get(cand, 0.0) + bump
            total = sum(weights[c] for c in available)
            target = rng.random() * total
            acc = 0.0
            pick = available[-1]
            for cand in available:
                acc += weights[cand]
                if target < acc:
                    pick = cand
                    break
        chosen[slot.id] = pick
        used.add(pick)
        if pick[0] not in selected_tables:
            selected_tables.append(pick[0])
    return chosen


class _DistanceCache:
    def __init__(self, schema: DatabaseSchema):
        self._schema = schema
        self._cache: dict[tuple[str, str], int | None] = {}

    def get(self, a: str, b: str) -> int | None:
        key = (a, b) if a <= b else (b, a)
        if key not in self._cache:
            from .schema import fk_distance

            self._cache[key] = fk_distance(self._schema, a, b)
        return self._cache[key]


def fill_values(
    sql_partial: str,
    bindings: dict[int, tuple[str, str]],
    db: Database,
    rng: np.random.Generator,
) -> str:
    """Replace value placeholders with cell values from the database.

    Each placeholder is associated with the nearest preceding column
    placeholder of the same coarse type, and filled from that bound
    column's distinct non-null values, quoted per its type.
    """
    tokens = tokenize(sql_partial)
    seen_columns: list[tuple[int, str, int]] = []  # (token pos, type, slot id)
    ordinal = 0
    for idx, tok in enumerate(tokens):
        match = COLUMN_PLACEHOLDER_RE.match(tok.text) if tok.kind == "ident" else None
        if match:
            ordinal += 1
            seen_columns.append((idx, match.group(1), ordinal))

    value_cache: dict[tuple[str, str], list] = {}
    out: list[Token] = []
    ordinal = 0
    for idx, tok in enumerate(tokens):
        if tok.kind != "vslot":
            out.append(tok)
            continue
        wanted = VALUE_TYPE_BY_TOKEN[tok.text]
        slot_id = None
        for pos, col_type, col_ordinal in reversed(seen_columns):
            if pos < idx and col_type == wanted:
                slot_id = col_ordinal
                break
        if slot_id is None or slot_id not in bindings:
            raise NoValuesAvailable(
                f"value placeholder {tok.text} has no preceding {wanted} column"
            )
        table, column = bindings[slot_id]
        values = _distinct_values(db, table, column, wanted, value_cache)
        if not values:
            raise NoValuesAvailable(f"{table}.{column} has no usable values")
        value = values[int(rng.integers(len(values)))]
        out.extend(_literal_tokens(value, wanted))
    return render(out)


def _distinct_values(
    db: Database, table: str, column: str, wanted: str, cache: dict
) -> list:
    key = (table, column)
    if key not in cache:
        sql = (
            f'SELECT DISTINCT "{column}" FROM "{table}"'
            f' WHERE "{column}" IS NOT NULL ORDER BY 1'
        )
        rows = execute(db, sql, ExecConfig()).rows
        values = [row[0] for row in rows]
        if wanted == "number":
            values = [v for v in values if isinstance(v, (int, float))]
        elif wanted in ("text", "time"):
            values = [v for v in values if isinstance(v, str)]
        elif wanted == "boolean":
            values = [v for v in values if isinstance(v, (int, str))]
        cache[key] = values
    return cache[key]


def _literal_tokens(value, wanted: str) -> list[Token]:
    if wanted == "number":
        text = repr(int(value)) if isinstance(value, int) else repr(float(value))
        return tokenize(text)
    if wanted == "boolean" and isinstance(value, int):
        return [Token("number", str(value))]
    return [Token("string", quote_string(str(value)))]


def reconstruct_from_clause(
    bindings: dict[int, tuple[str, str]], schema: DatabaseSchema
) -> str:
    """FROM/JOIN text joining all bound tables along shortest FK paths."""
    if not bindings:
        raise ValueError("no bindings to build a FROM clause from")
    tables: list[str] = []
    for slot_id in sorted(bindings):
        table = bindings[slot_id][0]
        if table not in tables:
            tables.append(table)
    return _from_clause(tables, schema)


def _from_clause(tables: list[str], schema: DatabaseSchema) -> str:
    parts = [f"FROM {tables[0]}"]
    included = [tables[0]]
    for table in tables[1:]:
        if table in included:
            continue
        path = _shortest_attachment(table, included, schema)
        if path is None:
            raise DisconnectedTables(
                f"table {table!r} has no FK path to {included!r}"
            )
        for existing, new, fk in path:
            if new in included:
                continue
            if existing == fk.to_table and new == fk.from_table:
                left = f"{fk.to_table}.{fk.to_column}"
                right = f"{fk.from_table}.{fk.from_column}"
            else:
                left = f"{fk.from_table}.{fk.from_column}"
                right = f"{fk.to_table}.{fk.to_column}"
            parts.append(f"JOIN {new} ON {left} = {right}")
            included.append(new)
    return " ".join(parts)


def _shortest_attachment(target: str, included: list[str], schema: DatabaseSchema):
    """BFS from the included set to target; edges oriented existing->new."""
    adj = schema.adjacency()
    seen = set(included)
    frontier = deque((t, []) for t in included)
    while frontier:
        node, path = frontier.popleft()
        for neighbor, fk in adj[node]:
            if neighbor in seen:
                continue
            step = path + [(node, neighbor, fk)]
            if neighbor == target:
                return step
            seen.add(neighbor)
            frontier.append((neighbor, step))
    return None


def _compose(
    filled_sql: str,
    bindings: dict[int, tuple[str, str]],
    schema: DatabaseSchema,
    rng: np.random.Generator,
) -> str:
    tokens = tokenize(filled_sql)
    slot_ids: dict[int, int] = {}
    ordinal = 0
    for idx, tok in enumerate(tokens):
        if tok.kind == "ident" and COLUMN_PLACEHOLDER_RE.match(tok.text):
            ordinal += 1
            slot_ids[idx] = ordinal
    out = _compose_compound(tokens, 0, len(tokens), slot_ids, bindings, schema, rng)
    return render(out)


def _compose_compound(tokens, lo, hi, slot_ids, bindings, schema, rng) -> list[Token]:
    out: list[Token] = []
    prev = lo
    for pos in top_level_positions(tokens, lo, hi, SET_OPS):
        out.extend(_compose_member(tokens, prev, pos, slot_ids, bindings, schema, rng))
        out.append(tokens[pos])
        prev = pos + 1
        if prev < hi and tokens[prev].is_kw("all"):
            out.append(tokens[prev])
            prev += 1
    out.extend(_compose_member(tokens, prev, hi, slot_ids, bindings, schema, rng))
    return out


def _compose_member(tokens, lo, hi, slot_ids, bindings, schema, rng) -> list[Token]:
    if lo >= hi:
        raise ParseError("empty SELECT member in skeleton")
    if tokens[lo].text == "(":
        close = matching_paren(tokens, lo)
        if close == hi - 1:
            inner = _compose_compound(
                tokens, lo + 1, close, slot_ids, bindings, schema, rng
            )
            return [tokens[lo], *inner, tokens[close]]
    if not tokens[lo].is_kw("select"):
        raise ParseError(f"expected SELECT in skeleton, found {tokens[lo].text!r}")

    clause_positions = top_level_positions(tokens, lo + 1, hi, set(CLAUSE_STARTERS))
    insert_source = clause_positions[0] if clause_positions else hi

    out: list[Token] = []
    insert_at: int | None = None
    scope_tables: list[str] = []
    i = lo
    while i < hi:
        if insert_at is None and i >= insert_source:
            insert_at = len(out)
        tok = tokens[i]
        if tok.text == "(":
            close = matching_paren(tokens, i)
            if i + 1 < close and tokens[i + 1].is_kw("select"):
                out.append(tok)
                out.extend(
                    _compose_compound(
                        tokens, i + 1, close, slot_ids, bindings, schema, rng
                    )
                )
                out.append(tokens[close])
                i = close + 1
                continue
        if i in slot_ids:
            table, column = bindings[slot_ids[i]]
            out.append(Token("ident", f"{table}.{column}"))
            if table not in scope_tables:
                scope_tables.append(table)
            i += 1
            continue
        out.append(tok)
        i += 1
    if insert_at is None:
        insert_at = len(out)

    if scope_tables:
        from_text = _from_clause(scope_tables, schema)
    else:
        # Templates carry no table information; anchor on a uniform draw.
        table = schema.tables[int(rng.integers(len(schema.tables)))].name
        from_text = f"FROM {table}"
    return out[:insert_at] + tokenize(from_text) + out[insert_at:]


def instantiate(
    template: SqlTemplate,
    schema: DatabaseSchema,
    db: Database,
    rng: np.random.Generator,
    max_retries: int = 20,
    config: ExecConfig = ExecConfig(),
) -> SynthSample:
    """Produce one executable sample from a template.

    Random choices are retried on recoverable failures; zero-row results
    are accepted.  A type with no compatible column at all is not
    retryable and passes through immediately.
    """
    if max_retries < 1:
        raise ValueError("max_retries must be positive")
    last_error: Exception | None = None
    for _ in range(max_retries):
        try:
            bindings = select_columns(template, schema, rng)
            filled = fill_values(template.skeleton, bindings, db, rng)
            sql = _compose(filled, bindings, schema, rng)
            execute(db, sql, config)
            question = render_nlq(sql, schema)
            return SynthSample(
                question=question,
                sql=sql,
                db_id=schema.db_id,
                origin="synthetic",
                template_id=template.skeleton,
            )
        except (
            ExhaustedCandidates,
            NoValuesAvailable,
            DisconnectedTables,
            SqlSyntaxError,
            SqlRuntimeError,
            SqlTimeout,
            ParseError,
        ) as exc:
            last_error = exc
    raise InstantiationFailed(
        f"gave up after {max_retries} attempts: {last_error}"
    )


def synthesize_dataset(
    pool: TemplatePool,
    schema: DatabaseSchema,
    db: Database,
    n: int,
    rng: np.random.Generator,
    max_retries: int = 20,
    config: ExecConfig = ExecConfig(),
) -> list[SynthSample]:
    """Draw templates by training frequency and instantiate n samples.

    Duplicate SQL strings are dropped and resampled; the run stalls out
    once n * max_retries template draws failed to reach the target.
    """
    if n <= 0:
        raise ValueError("dataset size must be positive")
    samples: list[SynthSample] = []
    seen: set[str] = set()
    attempts = 0
    budget = n * max_retries
    while len(samples) < n:
        if attempts >= budget:
            raise SynthesisStalled(
                f"produced {len(samples)}/{n} samples in {attempts} attempts"
            )
        attempts += 1
        template = sample_template(pool, rng)
        try:
            sample = instantiate(template, schema, db, rng, max_retries, config)
        except (InstantiationFailed, NoCompatibleColumn):
            continue
        if sample.sql in seen:
            continue
        seen.add(sample.sql)
        samples.append(sample)
    return samples


# -- deterministic question rendering ----------------------------------------

_OP_PHRASES = {
    "=": "equal to",
    ">": "greater than",
    "<": "less than",
    ">=": "at least",
    "<=": "at most",
    "!=": "not equal to",
    "<>": "not equal to",
}

_AGG_WORDS = {
    "count": "number of",
    "avg": "average",
    "sum": "total",
    "max": "maximum",
    "min": "minimum",
}

_SET_OP_WORDS = {"union": " or ", "intersect": " and also ", "except": " excluding "}


def render_nlq(sql: str, schema: DatabaseSchema) -> str:
    """Render an English question for a SELECT by fixed clause rules."""
    tokens = strip_terminator(tokenize(sql))
    if not tokens or not (tokens[0].is_kw("select") or tokens[0].text == "("):
        raise ParseError("only SELECT statements can be rendered")
    return _nlq_compound(tokens, 0, len(tokens)) + "."


def _nlq_compound(tokens, lo, hi) -> str:
    parts: list[str] = []
    prev = lo
    joiner = " or "
    for pos in top_level_positions(tokens, lo, hi, SET_OPS):
        parts.append(_nlq_member(tokens, prev, pos))
        joiner = _SET_OP_WORDS[tokens[pos].text.lower()]
        prev = pos + 1
        if prev < hi and tokens[prev].is_kw("all"):
            prev += 1
    parts.append(_nlq_member(tokens, prev, hi))
    return joiner.join(parts)


def _nlq_member(tokens, lo, hi) -> str:
    if lo >= hi:
        raise ParseError("empty SELECT member")
    if tokens[lo].text == "(":
        close = matching_paren(tokens, lo)
        if close == hi - 1:
            return _nlq_compound(tokens, lo + 1, close)
    if not tokens[lo].is_kw("select"):
        raise ParseError(f"expected SELECT, found {tokens[lo].text!r}")

    clause_pos: dict[str, int] = {}
    for i in top_level_positions(tokens, lo + 1, hi, set(CLAUSE_STARTERS)):
        clause_pos.setdefault(tokens[i].text.lower(), i)
    boundaries = sorted(clause_pos.values())

    def span(word: str, skip: int = 1) -> tuple[int, int] | None:
        if word not in clause_pos:
            return None
        start = clause_pos[word] + skip
        end = hi
        for b in boundaries:
            if b > clause_pos[word]:
                end = b
                break
        return (start, end)

    select_end = boundaries[0] if boundaries else hi
    first_table = "the data"
    from_span = span("from")
    if from_span is not None:
        for i in range(*from_span):
            if tokens[i].kind in ("ident", "qident") and tokens[i].keyword is None:
                first_table = tokens[i].ident_value
                break

    phrases: list[str] = []
    select_items = _split_commas(tokens, lo + 1, select_end)
    distinct = False
    if select_items and select_items[0] and select_items[0][0].is_kw("distinct"):
        distinct = True
        select_items[0] = select_items[0][1:]
    if len(select_items) == 1 and _is_count_star(select_items[0]):
        phrases.append(f"How many {first_table} are there")
    else:
        rendered = ", ".join(_item_text(item) for item in select_items)
        prefix = "distinct " if distinct else ""
        phrases.append(f"List the {prefix}{rendered} of {first_table}")

    where_span = span("where")
    if where_span is not None:
        phrases.append("where " + _conditions_text(tokens, *where_span))
    group_span = span("group", skip=2)
    if group_span is not None:
        cols = ", ".join(
            _item_text(item) for item in _split_commas(tokens, *group_span)
        )
        phrases.append(f"for each {cols}")
    having_span = span("having")
    if having_span is not None:
        phrases.append("having " + _conditions_text(tokens, *having_span))
    order_span = span("order", skip=2)
    limit_span = span("limit")
    if order_span is not None:
        items = _split_commas(tokens, *order_span)
        first = [t for t in items[0] if not t.is_kw("asc", "desc")]
        by = _item_text(first)
        if limit_span is not None:
            k = render(tokens[limit_span[0] : limit_span[1]])
            phrases.append(f"and give the top {k} by {by}")
        else:
            phrases.append(f"sorted by {by}")
    elif limit_span is not None:
        k = render(tokens[limit_span[0] : limit_span[1]])
        phrases.append(f"and give the top {k}")
    return " ".join(phrases)


def _split_commas(tokens, lo, hi) -> list[list[Token]]:
    items: list[list[Token]] = []
    depth = 0
    current: list[Token] = []
    for i in range(lo, hi):
        text = tokens[i].text
        if text == "(":
            depth += 1
        elif text == ")":
            depth -= 1
        if text == "," and depth == 0:
            items.append(current)
            current = []
            continue
        current.append(tokens[i])
    items.append(current)
    return items


def _is_count_star(item: list[Token]) -> bool:
    return (
        len(item) == 4
        and item[0].kind == "ident"
        and item[0].text.lower() == "count"
        and item[1].text == "("
        and item[2].text == "*"
        and item[3].text == ")"
    )


def _strip_qualifier(item: list[Token]) -> list[Token]:
    out: list[Token] = []
    i = 0
    while i < len(item):
        if (
            i + 2 < len(item)
            and item[i].kind in ("ident", "qident")
            and item[i + 1].text == "."
        ):
            out.append(item[i + 2])
            i += 3
            continue
        # Composed SQL qualifies columns as a single table.column token.
        if item[i].kind == "ident" and "." in item[i].text:
            out.append(Token("ident", item[i].text.split(".", 1)[1]))
            i += 1
            continue
        out.append(item[i])
        i += 1
    return out


def _item_text(item: list[Token]) -> str:
    item = _strip_qualifier(item)
    if not item:
        return "rows"
    # Drop a trailing output alias.
    if len(item) >= 2 and item[-2].is_kw("as"):
        item = item[:-2]
    if (
        len(item) >= 3
        and item[0].kind == "ident"
        and item[0].text.lower() in _AGG_WORDS
        and item[1].text == "("
        and item[-1].text == ")"
    ):
        inner = item[2:-1]
        if inner and inner[0].is_kw("distinct"):
            inner = inner[1:]
        inner_text = "rows" if len(inner) == 1 and inner[0].text == "*" else render(inner)
        return f"{_AGG_WORDS[item[0].text.lower()]} {inner_text}"
    return render(item)


def _conditions_text(tokens, lo, hi) -> str:
    parts: list[str] = []
    connectives: list[str] = []
    depth = 0
    start = lo
    expect_between_and = False
    for i in range(lo, hi):
        text = tokens[i].text
        if text == "(":
            depth += 1
        elif text == ")":
            depth -= 1
        elif depth == 0 and tokens[i].is_kw("between"):
            expect_between_and = True
        elif depth == 0 and tokens[i].is_kw("and", "or"):
            if expect_between_and and tokens[i].is_kw("and"):
                expect_between_and = False
                continue
            parts.append(_condition_phrase(tokens[start:i]))
            connectives.append(tokens[i].text.lower())
            start = i + 1
    parts.append(_condition_phrase(tokens[start:hi]))
    text = parts[0]
    for connective, part in zip(connectives, parts[1:]):
        text += f" {connective} {part}"
    return text


def _condition_phrase(cond: list[Token]) -> str:
    depth = 0
    for i, tok in enumerate(cond):
        text = tok.text
        if text == "(":
            depth += 1
        elif text == ")":
            depth -= 1
        if depth != 0:
            continue
        if tok.kind == "op" and text in _OP_PHRASES:
            lhs = _item_text(cond[:i])
            rhs = _value_text(cond[i + 1 :])
            return f"{lhs} is {_OP_PHRASES[text]} {rhs}"
        if tok.is_kw("like"):
            negated = i > 0 and cond[i - 1].is_kw("not")
            lhs = _item_text(cond[: i - 1 if negated else i])
            rhs = _value_text(cond[i + 1 :])
            return f"{lhs} is {'not like' if negated else 'like'} {rhs}"
        if tok.is_kw("between"):
            lhs = _item_text(cond[:i])
            rest = cond[i + 1 :]
            for j, inner in enumerate(rest):
                if inner.is_kw("and"):
                    low = _value_text(rest[:j])
                    high = _value_text(rest[j + 1 :])
                    return f"{lhs} is between {low} and {high}"
        if tok.is_kw("is"):
            lhs = _item_text(cond[:i])
            tail = render(cond[i + 1 :]).lower()
            return f"{lhs} is {tail}"
        if tok.is_kw("in"):
            negated = i > 0 and cond[i - 1].is_kw("not")
            lhs = _item_text(cond[: i - 1 if negated else i])
            rhs = _value_text(cond[i + 1 :])
            return f"{lhs} is {'not one of' if negated else 'one of'} {rhs}"
    # No recognized comparison; fall back to the raw text.
    return render(_strip_qualifier(cond))


def _value_text(tokens: list[Token]) -> str:
    if len(tokens) == 1 and tokens[0].kind == "string":
        return tokens[0].string_value
    if (
        len(tokens) >= 2
        and tokens[0].text == "("
        and tokens[-1].text == ")"
        and not any(t.is_kw("select") for t in tokens)
    ):
        inner = _split_commas(tokens, 1, len(tokens) - 1)
        return ", ".join(_value_text(item) for item in inner)
    return render(_strip_qualifier(tokens))
