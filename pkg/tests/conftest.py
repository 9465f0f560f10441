"""Shared fixtures: a toy two-table database and schema variants."""

import sqlite3

import pytest

from sqlarena.executor import Database
from sqlarena.samples import SynthSample
from sqlarena.schema import load_schema, schema_from_dict
from sqlarena.template import build_pool

TOY_DB_SCRIPT = """
CREATE TABLE singer (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    age INTEGER
);
CREATE TABLE concert (
    id INTEGER PRIMARY KEY,
    name TEXT,
    year INTEGER,
    singer_id INTEGER REFERENCES singer(id)
);
INSERT INTO singer VALUES (1, 'John Mayer', 35);
INSERT INTO singer VALUES (2, 'Ava Stone', 21);
INSERT INTO singer VALUES (3, 'Mia O''Neal', 47);
INSERT INTO concert VALUES (1, 'New York', 2020, 1);
INSERT INTO concert VALUES (2, 'York', 2021, 2);
INSERT INTO concert VALUES (3, 'Harvest Moon', 2020, 3);
INSERT INTO concert VALUES (4, 'Winter Gala', 2019, 1);
"""

CORPUS_SQLS = [
    "SELECT name FROM singer WHERE age > 20",
    "SELECT count(*) FROM concert",
    "SELECT name FROM concert WHERE year = 2020",
    "SELECT singer.name FROM singer JOIN concert"
    " ON singer.id = concert.singer_id WHERE concert.year = 2020",
    "SELECT name FROM singer ORDER BY age DESC LIMIT 2",
    "SELECT year, count(*) FROM concert GROUP BY year",
]


def make_database(path, script=TOY_DB_SCRIPT):
    conn = sqlite3.connect(path)
    conn.executescript(script)
    conn.commit()
    conn.close()
    return str(path)


@pytest.fixture(scope="session")
def toy_db_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("db") / "toy.sqlite"
    return make_database(path)


@pytest.fixture(scope="session")
def toy_db(toy_db_path):
    return Database(toy_db_path)


@pytest.fixture(scope="session")
def toy_schema(toy_db_path):
    return load_schema(toy_db_path, "database_file")


@pytest.fixture(scope="session")
def toy_corpus(toy_schema):
    return [SynthSample("?", sql, toy_schema.db_id) for sql in CORPUS_SQLS]


@pytest.fixture(scope="session")
def toy_pool(toy_corpus, toy_schema):
    return build_pool(toy_corpus, {toy_schema.db_id: toy_schema})


@pytest.fixture(scope="session")
def disconnected_schema():
    """Toy schema plus a venue table with no FK edges."""
    return schema_from_dict(
        {
            "db_id": "toy",
            "tables": [
                {
                    "name": "singer",
                    "columns": [
                        {"name": "id", "type": "number", "pk": True, "comment": None},
                        {"name": "name", "type": "text", "pk": False, "comment": None},
                        {"name": "age", "type": "number", "pk": False, "comment": None},
                    ],
                },
                {
                    "name": "concert",
                    "columns": [
                        {"name": "id", "type": "number", "pk": True, "comment": None},
                        {"name": "name", "type": "text", "pk": False, "comment": None},
                        {"name": "year", "type": "number", "pk": False, "comment": None},
                        {"name": "singer_id", "type": "number", "pk": False, "comment": None},
                    ],
                },
                {
                    "name": "venue",
                    "columns": [
                        {"name": "vid", "type": "number", "pk": True, "comment": None},
                        {"name": "city", "type": "text", "pk": False, "comment": None},
                    ],
                },
            ],
            "foreign_keys": [
                {
                    "from_table": "concert",
                    "from_column": "singer_id",
                    "to_table": "singer",
                    "to_column": "id",
                }
            ],
        }
    )
