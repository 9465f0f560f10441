"""In-memory relational schema model with its foreign-key graph.

Schemas load either from an embedded SQLite database file or from the
canonical schema_json interchange form.  Column types are coarsened to a
five-value enum (number, text, time, boolean, other) so that template
slots transfer across databases.  The foreign-key graph supplies the
schema-distance primitive (undirected shortest-path hop count) used to
weight column candidates during instantiation.
"""

from __future__ import annotations

import json
import sqlite3
from collections import deque
from dataclasses import dataclass, field

from .errors import FormatError, IoError, UnknownTable, UnresolvedFk

DATA_TYPES = ("number", "text", "time", "boolean", "other")


@dataclass(frozen=True)
class ColumnDef:
    name: str
    data_type: str
    is_primary_key: bool = False
    comment: str | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise FormatError("column name must be nonempty")
        if self.data_type not in DATA_TYPES:
            raise FormatError(f"unknown data type {self.data_type!r}")


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[ColumnDef, ...]

    def __post_init__(self) -> None:
        if not self.name:
            raise FormatError("table name must be nonempty")
        if not self.columns:
            raise FormatError(f"table {self.name!r} has no columns")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise FormatError(f"duplicate column names in table {self.name!r}")

    def column(self, name: str) -> ColumnDef | None:
        lowered = name.lower()
        for col in self.columns:
            if col.name.lower() == lowered:
                return col
        return None


@dataclass(frozen=True)
class ForeignKey:
    from_table: str
    from_column: str
    to_table: str
    to_column: str

    def __post_init__(self) -> None:
        same_endpoint = (
            self.from_table == self.to_table and self.from_column == self.to_column
        )
        if same_endpoint:
            raise FormatError("foreign key may not reference its own column")


@dataclass(frozen=True)
class DatabaseSchema:
    db_id: str
    tables: tuple[TableDef, ...]
    foreign_keys: tuple[ForeignKey, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not self.tables:
            raise FormatError("schema must declare at least one table")
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise FormatError("duplicate table names in schema")
        for fk in self.foreign_keys:
            for tab, col in (
                (fk.from_table, fk.from_column),
                (fk.to_table, fk.to_column),
            ):
                table = self._find_table(tab)
                if table is None:
                    raise UnresolvedFk(f"foreign key references unknown table {tab!r}")
                if table.column(col) is None:
                    raise UnresolvedFk(
                        f"foreign key references unknown column {tab}.{col}"
                    )

    def _find_table(self, name: str) -> TableDef | None:
        lowered = name.lower()
        for table in self.tables:
            if table.name.lower() == lowered:
                return table
        return None

    def table(self, name: str) -> TableDef:
        table = self._find_table(name)
        if table is None:
            raise UnknownTable(f"no table named {name!r}")
        return table

    def has_table(self, name: str) -> bool:
        return self._find_table(name) is not None

    def fk_participants(self) -> set[tuple[str, str]]:
        """(table, column) pairs appearing on either side of a foreign key."""
        out: set[tuple[str, str]] = set()
        for fk in self.foreign_keys:
            out.add((fk.from_table, fk.from_column))
            out.add((fk.to_table, fk.to_column))
        return out

    def adjacency(self) -> dict[str, list[tuple[str, ForeignKey]]]:
        """Undirected FK multigraph over tables, in declaration order."""
        adj: dict[str, list[tuple[str, ForeignKey]]] = {t.name: [] for t in self.tables}
        for fk in self.foreign_keys:
            adj[fk.from_table].append((fk.to_table, fk))
            adj[fk.to_table].append((fk.from_table, fk))
        return adj


def fk_distance(schema: DatabaseSchema, table_a: str, table_b: str) -> int | None:
    """Shortest-path hop count between two tables on the undirected FK graph.

    Returns 0 for identical tables and None when the tables lie in
    different components.
    """
    a = schema.table(table_a).name
    b = schema.table(table_b).name
    if a == b:
        return 0
    adj = schema.adjacency()
    seen = {a}
    frontier = deque([(a, 0)])
    while frontier:
        node, dist = frontier.popleft()
        for neighbor, _ in adj[node]:
            if neighbor == b:
                return dist + 1
            if neighbor not in seen:
                seen.add(neighbor)
                frontier.append((neighbor, dist + 1))
    return None


def columns_of_type(
    schema: DatabaseSchema, data_type: str
) -> list[tuple[str, ColumnDef]]:
    """All columns of the given coarse type, in declaration order."""
    if data_type not in DATA_TYPES:
        raise FormatError(f"unknown data type {data_type!r}")
    return [
        (table.name, col)
        for table in schema.tables
        for col in table.columns
        if col.data_type == data_type
    ]


def coarse_type(declared: str | None) -> str:
    """Map an engine type string onto the five-value enum.

    Affinity rules: boolean first, then date/time, integer/real/decimal,
    character/text, otherwise "other".
    """
    decl = (declared or "").upper()
    if not decl:
        return "other"
    if "BOOL" in decl:
        return "boolean"
    if "DATE" in decl or "TIME" in decl:
        return "time"
    if "INT" in decl:
        return "number"
    for marker in ("REAL", "FLOA", "DOUB", "NUMERIC", "DECIMAL"):
        if marker in decl:
            return "number"
    for marker in ("CHAR", "CLOB", "TEXT"):
        if marker in decl:
            return "text"
    return "other"


def load_schema(path: str, kind: str) -> DatabaseSchema:
    """Load a schema from a database file or a schema_json file."""
    if kind == "database_file":
        return _load_from_database(path)
    if kind == "schema_json":
        return _load_from_json(path)
    raise ValueError(f"unknown schema source kind {kind!r}")


def _load_from_database(path: str) -> DatabaseSchema:
    try:
        conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    except sqlite3.Error as exc:
        raise IoError(f"cannot open database {path!r}: {exc}") from exc
    try:
        try:
            rows = conn.execute(
                "SELECT name FROM sqlite_master"
                " WHERE type = 'table' AND name NOT LIKE 'sqlite_%'"
            ).fetchall()
        except sqlite3.Error as exc:
            raise IoError(f"cannot read database {path!r}: {exc}") from exc
        tables = []
        fks = []
        for (table_name,) in rows:
            cols = []
            for _, name, decl, _, _, pk in conn.execute(
                f'PRAGMA table_info("{table_name}")'
            ):
                cols.append(ColumnDef(name, coarse_type(decl), is_primary_key=pk > 0))
            tables.append(TableDef(table_name, tuple(cols)))
            for fk_row in conn.execute(f'PRAGMA foreign_key_list("{table_name}")'):
                _, _, target, from_col, to_col = fk_row[:5]
                if to_col is None:
                    to_col = _primary_key_of(conn, target)
                fks.append(ForeignKey(table_name, from_col, target, to_col))
        db_id = _stem(path)
        return DatabaseSchema(db_id, tuple(tables), tuple(fks))
    finally:
        conn.close()


def _primary_key_of(conn: sqlite3.Connection, table: str) -> str:
    for _, name, _, _, _, pk in conn.execute(f'PRAGMA table_info("{table}")'):
        if pk > 0:
            return name
    raise UnresolvedFk(f"implicit foreign key target {table!r} has no primary key")


def _stem(path: str) -> str:
    base = path.replace("\\", "/").rsplit("/", 1)[-1]
    return base.rsplit(".", 1)[0] if "." in base else base


def _load_from_json(path: str) -> DatabaseSchema:
    try:
        with open(path, encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise IoError(f"cannot read schema file {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"schema file {path!r} is not valid JSON: {exc}") from exc
    return schema_from_dict(raw)


def schema_from_dict(raw: dict) -> DatabaseSchema:
    try:
        tables = tuple(
            TableDef(
                t["name"],
                tuple(
                    ColumnDef(
                        c["name"],
                        c["type"],
                        is_primary_key=bool(c.get("pk", False)),
                        comment=c.get("comment"),
                    )
                    for c in t["columns"]
                ),
            )
            for t in raw["tables"]
        )
        fks = tuple(
            ForeignKey(f["from_table"], f["from_column"], f["to_table"], f["to_column"])
            for f in raw.get("foreign_keys", [])
        )
        return DatabaseSchema(raw["db_id"], tables, fks)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed schema description: {exc}") from exc


def schema_to_dict(schema: DatabaseSchema) -> dict:
    """Canonical schema_json form; key order and array order are fixed."""
    return {
        "db_id": schema.db_id,
        "tables": [
            {
                "name": t.name,
                "columns": [
                    {
                        "name": c.name,
                        "type": c.data_type,
                        "pk": c.is_primary_key,
                        "comment": c.comment,
                    }
                    for c in t.columns
                ],
            }
            for t in schema.tables
        ],
        "foreign_keys": [
            {
                "from_table": f.from_table,
                "from_column": f.from_column,
                "to_table": f.to_table,
                "to_column": f.to_column,
            }
            for f in schema.foreign_keys
        ],
    }


def save_schema(schema: DatabaseSchema, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(schema_to_dict(schema), handle, indent=2)
        handle.write("\n")
