"""Template extraction, the pool, and frequency-weighted sampling."""

import re

import numpy as np
import pytest

from sqlarena.errors import (
    AllItemsFailed,
    EmptyPool,
    ParseError,
    UnresolvedColumn,
    UnsupportedStatement,
)
from sqlarena.samples import SynthSample
from sqlarena.template import (
    VALUE_TYPE_BY_TOKEN,
    build_pool,
    extract_template,
    load_pool,
    pool_from_dict,
    pool_to_dict,
    sample_template,
    save_pool,
)

PLACEHOLDER_RE = re.compile(r"col_(?:number|text|time|boolean|other)(?:_key_fk)?_\d+")


class TestExtractTemplate:
    def test_simple_where(self, toy_schema):
        t = extract_template("SELECT name FROM singer WHERE age > 20", toy_schema)
        assert t.skeleton == "SELECT col_text_1 WHERE col_number_1 > [NUM]"
        assert [s.signature for s in t.slots] == [
            ("column", "text", False),
            ("column", "number", False),
            ("value", "number", False),
        ]
        assert [s.id for s in t.slots] == [1, 2, 1]

    def test_join_clause_dropped_with_its_columns(self, toy_schema):
        sql = (
            "SELECT T1.name FROM singer T1 JOIN concert T2"
            " ON T1.id = T2.singer_id WHERE T2.year = 2020"
        )
        t = extract_template(sql, toy_schema)
        assert t.skeleton == "SELECT col_text_1 WHERE col_number_1 = [NUM]"

    def test_count_star_only(self, toy_schema):
        t = extract_template("SELECT count(*) FROM singer", toy_schema)
        assert t.skeleton == "SELECT count(*)"
        assert t.slots == ()

    def test_fk_column_outside_join_gets_suffix(self, toy_schema):
        t = extract_template(
            "SELECT singer_id FROM concert WHERE year = 2020", toy_schema
        )
        assert t.skeleton == "SELECT col_number_key_fk_1 WHERE col_number_1 = [NUM]"
        assert t.slots[0].is_fk

    def test_string_and_like_literals(self, toy_schema):
        t = extract_template(
            "SELECT age FROM singer WHERE name = 'John Mayer'", toy_schema
        )
        assert t.skeleton == "SELECT col_number_1 WHERE col_text_1 = [STR]"

    def test_subquery_normalized_recursively(self, toy_schema):
        sql = (
            "SELECT name FROM singer WHERE age > "
            "(SELECT avg(age) FROM singer)"
        )
        t = extract_template(sql, toy_schema)
        assert (
            t.skeleton
            == "SELECT col_text_1 WHERE col_number_1 > (SELECT avg(col_number_2))"
        )

    def test_limit_count_stays_verbatim(self, toy_schema):
        t = extract_template(
            "SELECT name FROM singer ORDER BY age DESC LIMIT 2", toy_schema
        )
        assert t.skeleton == "SELECT col_text_1 ORDER BY col_number_1 DESC LIMIT 2"

    def test_non_select_rejected(self, toy_schema):
        with pytest.raises(UnsupportedStatement):
            extract_template("DELETE FROM singer", toy_schema)
        with pytest.raises(UnsupportedStatement):
            extract_template("WITH x AS (SELECT 1) SELECT * FROM x", toy_schema)

    def test_unresolved_column(self, toy_schema):
        with pytest.raises(UnresolvedColumn):
            extract_template("SELECT haircut FROM singer", toy_schema)
        with pytest.raises(UnresolvedColumn):
            extract_template("SELECT name FROM ghosts", toy_schema)

    def test_garbage_rejected(self, toy_schema):
        with pytest.raises(ParseError):
            extract_template("SELECT name FROM singer WHERE (", toy_schema)


class TestSkeletonInvariants:
    def test_no_from_join_or_schema_names(self, toy_corpus, toy_schema):
        forbidden = {"from", "join"}
        names = {t.name for t in toy_schema.tables}
        names |= {c.name for t in toy_schema.tables for c in t.columns}
        for sample in toy_corpus:
            skeleton = extract_template(sample.sql, toy_schema).skeleton
            words = {w.lower() for w in re.findall(r"[A-Za-z_]+", skeleton)}
            assert not (words & forbidden), skeleton
            leftovers = {
                w for w in re.findall(r"[A-Za-z_][A-Za-z0-9_]*", skeleton)
                if w in names
            }
            assert not leftovers, skeleton

    def test_slot_count_matches_placeholder_count(self, toy_corpus, toy_schema):
        for sample in toy_corpus:
            t = extract_template(sample.sql, toy_schema)
            column_tokens = PLACEHOLDER_RE.findall(t.skeleton)
            value_tokens = [
                tok for tok in re.findall(r"\[(?:NUM|STR|TIME|BOOL)\]", t.skeleton)
            ]
            assert len(column_tokens) == len(t.column_slots())
            assert len(value_tokens) == len(t.value_slots())
            for tok, slot in zip(value_tokens, t.value_slots()):
                assert VALUE_TYPE_BY_TOKEN[tok] == slot.data_type


class TestBuildPool:
    def test_dedup_counts(self, toy_schema):
        corpus = [
            SynthSample("?", "SELECT name FROM singer WHERE age > 20", toy_schema.db_id),
            SynthSample("?", "SELECT name FROM concert WHERE year > 2019", toy_schema.db_id),
            SynthSample("?", "SELECT count(*) FROM singer", toy_schema.db_id),
        ]
        pool = build_pool(corpus, {toy_schema.db_id: toy_schema})
        counts = sorted(t.source_count for t in pool.templates)
        assert len(pool.templates) == 2
        assert counts == [1, 2]
        assert pool.total_count == 3

    def test_identical_corpus_items_merge(self, toy_schema):
        corpus = [
            SynthSample("?", "SELECT count(*) FROM singer", toy_schema.db_id)
            for _ in range(5)
        ]
        pool = build_pool(corpus, {toy_schema.db_id: toy_schema})
        assert len(pool.templates) == 1
        assert pool.templates[0].source_count == 5

    def test_all_non_select_fails(self, toy_schema):
        corpus = [
            SynthSample("?", "DROP TABLE singer", toy_schema.db_id),
            SynthSample("?", "UPDATE singer SET age = 1", toy_schema.db_id),
        ]
        with pytest.raises(AllItemsFailed):
            build_pool(corpus, {toy_schema.db_id: toy_schema})

    def test_unparseable_items_counted(self, toy_schema):
        corpus = [
            SynthSample("?", "SELECT count(*) FROM singer", toy_schema.db_id),
            SynthSample("?", "DROP TABLE singer", toy_schema.db_id),
        ]
        pool = build_pool(corpus, {toy_schema.db_id: toy_schema})
        assert len(pool.templates) == 1
        assert len(pool.skipped) == 1

    def test_doubling_corpus_doubles_counts(self, toy_corpus, toy_schema):
        lookup = {toy_schema.db_id: toy_schema}
        single = build_pool(toy_corpus, lookup)
        double = build_pool(toy_corpus + toy_corpus, lookup)
        assert {t.skeleton for t in single.templates} == {
            t.skeleton for t in double.templates
        }
        singles = {t.skeleton: t.source_count for t in single.templates}
        for t in double.templates:
            assert t.source_count == 2 * singles[t.skeleton]


class TestSampleTemplate:
    def test_single_template_always_drawn(self, toy_schema):
        corpus = [SynthSample("?", "SELECT count(*) FROM singer", toy_schema.db_id)]
        pool = build_pool(corpus, {toy_schema.db_id: toy_schema})
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert sample_template(pool, rng) is pool.templates[0]

    def test_frequency_follows_source_counts(self, toy_schema):
        corpus = [
            SynthSample("?", "SELECT count(*) FROM singer", toy_schema.db_id)
        ] * 3 + [
            SynthSample("?", "SELECT name FROM singer WHERE age > 20", toy_schema.db_id)
        ]
        pool = build_pool(corpus, {toy_schema.db_id: toy_schema})
        heavy = next(t for t in pool.templates if t.source_count == 3)
        rng = np.random.default_rng(12345)
        draws = sum(sample_template(pool, rng) is heavy for _ in range(10000))
        assert abs(draws / 10000 - 0.75) < 0.03

    def test_empty_pool_raises(self):
        from sqlarena.template import TemplatePool

        with pytest.raises(EmptyPool):
            sample_template(TemplatePool(()), np.random.default_rng(0))


class TestPoolSerialization:
    def test_json_round_trip(self, toy_pool, tmp_path):
        path = tmp_path / "pool.json"
        save_pool(toy_pool, str(path))
        reloaded = load_pool(str(path))
        assert pool_to_dict(reloaded) == pool_to_dict(toy_pool)
        assert reloaded.total_count == toy_pool.total_count

    def test_dict_shape(self, toy_pool):
        raw = pool_to_dict(toy_pool)
        entry = raw["templates"][0]
        assert set(entry) == {"skeleton", "slots", "count"}
        rebuilt = pool_from_dict(raw)
        assert [t.skeleton for t in rebuilt.templates] == [
            t.skeleton for t in toy_pool.templates
        ]
