"""Minimal SQL tokenizer and token-stream helpers.

Template skeletons must preserve source tokens verbatim, so all SQL
manipulation in this package happens on token streams rather than on a
re-rendering AST.  The tokenizer covers the SELECT dialect the rest of
the package needs: identifiers (bare, double-quoted, backtick or
bracket quoted), numeric and string literals, the usual comparison and
arithmetic operators, and the four value-placeholder tokens used by
skeletons ([NUM], [STR], [TIME], [BOOL]).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ParseError

KEYWORDS = frozenset(
    """
    select from where group by having order limit offset join on as and or
    not in exists between like is null distinct union intersect except all
    inner left right full outer cross asc desc case when then else end cast
    true false with recursive using collate escape
    current_date current_time current_timestamp
    """.split()
)

SET_OPS = frozenset({"union", "intersect", "except"})
CLAUSE_STARTERS = ("from", "where", "group", "having", "order", "limit")

VALUE_PLACEHOLDERS = ("[NUM]", "[STR]", "[TIME]", "[BOOL]")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>--[^\n]*|/\*.*?\*/)
  | (?P<vslot>\[(?:NUM|STR|TIME|BOOL)\])
  | (?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<string>'(?:[^']|'')*')
  | (?P<qident>"(?:[^"]|"")*"|`[^`]*`|\[[^\]]*\])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<op><=|>=|<>|!=|\|\||[=<>+\-*/%])
  | (?P<punct>[(),.;])
    """,
    re.VERBOSE | re.DOTALL,
)

_TIME_LITERAL_RE = re.compile(
    r"^\d{4}-\d{2}-\d{2}([ T]\d{2}:\d{2}(:\d{2}(\.\d+)?)?)?$|^\d{2}:\d{2}(:\d{2})?$"
)


@dataclass(frozen=True)
class Token:
    kind: str  # ident | qident | number | string | op | punct | vslot
    text: str  # verbatim source text

    def is_kw(self, *words: str) -> bool:
        return self.kind == "ident" and self.text.lower() in words

    @property
    def keyword(self) -> str | None:
        low = self.text.lower()
        if self.kind == "ident" and low in KEYWORDS:
            return low
        return None

    @property
    def ident_value(self) -> str:
        """Identifier text with any quoting stripped."""
        if self.kind == "qident":
            inner = self.text[1:-1]
            if self.text[0] == '"':
                return inner.replace('""', '"')
            return inner
        return self.text

    @property
    def string_value(self) -> str:
        return self.text[1:-1].replace("''", "'")


def tokenize(sql: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(sql):
        match = _TOKEN_RE.match(sql, pos)
        if match is None:
            raise ParseError(f"unexpected character {sql[pos]!r} at offset {pos}")
        pos = match.end()
        kind = match.lastgroup
        if kind in ("ws", "comment"):
            continue
        tokens.append(Token(kind, match.group()))
    return tokens


def render(tokens: list[Token]) -> str:
    """Join tokens with canonical spacing.

    Single spaces everywhere except: none after "(", none before ")",
    "," or ";", none around ".", and none before a call "(" (previous
    token is a non-keyword identifier).
    """
    parts: list[str] = []
    prev: Token | None = None
    for tok in tokens:
        if prev is not None:
            space = " "
            if prev.text == "(" or prev.text == ".":
                space = ""
            elif tok.text in (")", ",", ";", "."):
                space = ""
            elif tok.text == "(" and prev.kind in ("ident", "qident") and prev.keyword is None:
                space = ""
            parts.append(space)
        parts.append(tok.text)
        prev = tok
    return "".join(parts)


def matching_paren(tokens: list[Token], open_index: int) -> int:
    """Index of the ")" matching the "(" at open_index."""
    depth = 0
    for i in range(open_index, len(tokens)):
        text = tokens[i].text
        if text == "(":
            depth += 1
        elif text == ")":
            depth -= 1
            if depth == 0:
                return i
    raise ParseError("unbalanced parentheses")


def top_level_positions(
    tokens: list[Token], lo: int, hi: int, words: frozenset[str] | set[str]
) -> list[int]:
    """Indices in [lo, hi) of keyword tokens at paren depth zero."""
    out: list[int] = []
    depth = 0
    for i in range(lo, hi):
        text = tokens[i].text
        if text == "(":
            depth += 1
        elif text == ")":
            depth -= 1
        elif depth == 0 and tokens[i].kind == "ident" and text.lower() in words:
            out.append(i)
    return out


def strip_terminator(tokens: list[Token]) -> list[Token]:
    """Drop one trailing ";"; reject embedded statement separators."""
    if tokens and tokens[-1].text == ";":
        tokens = tokens[:-1]
    for tok in tokens:
        if tok.text == ";":
            raise ParseError("multiple statements are not supported")
    return tokens


def looks_like_time(text: str) -> bool:
    return bool(_TIME_LITERAL_RE.match(text.strip()))


def quote_string(value: str) -> str:
    """Render a text value as a single-quoted SQL literal."""
    return "'" + value.replace("'", "''") + "'"


def has_top_level_order_by(sql: str) -> bool:
    tokens = tokenize(sql)
    positions = top_level_positions(tokens, 0, len(tokens), {"order"})
    for pos in positions:
        if pos + 1 < len(tokens) and tokens[pos + 1].is_kw("by"):
            return True
    return False
