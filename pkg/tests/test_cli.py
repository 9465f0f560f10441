"""Exit codes, JSON-only stdout, artifact files and determinism."""

import json
import shutil
import subprocess
import sys

import pytest

from sqlarena.cli import main

from conftest import CORPUS_SQLS


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def corpus_file(tmp_path, toy_schema):
    path = tmp_path / "corpus.jsonl"
    with open(path, "w") as handle:
        for sql in CORPUS_SQLS:
            handle.write(json.dumps({"db_id": toy_schema.db_id, "question": "?", "sql": sql}) + "\n")
    return str(path)


@pytest.fixture
def config_file(tmp_path, toy_db_path):
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(
            {
                "seed": 11,
                "n_train": 12,
                "n_val": 6,
                "rounds": 2,
                "selfplay_iterations": 2,
                "candidates_per_question": 4,
                "gradient_steps": 15,
                "policy_epochs": 2,
                "db": str(toy_db_path),
            }
        )
    )
    return str(path)


class TestExtractTemplates:
    def test_writes_pool_and_stats(self, capsys, tmp_path, corpus_file, toy_db_path):
        out = tmp_path / "pool.json"
        code, stdout, _ = run_cli(
            capsys, "extract-templates",
            "--corpus", corpus_file, "--schema", toy_db_path, "--out", str(out),
        )
        assert code == 0
        stats = json.loads(stdout)
        assert stats["templates"] >= 4
        assert stats["skipped"] == 0
        pool = json.loads(out.read_text())
        assert {"skeleton", "slots", "count"} <= set(pool["templates"][0])

    def test_missing_corpus_exits_2(self, capsys, tmp_path, toy_db_path):
        code, stdout, stderr = run_cli(
            capsys, "extract-templates",
            "--corpus", str(tmp_path / "nope.jsonl"),
            "--schema", toy_db_path, "--out", str(tmp_path / "pool.json"),
        )
        assert code == 2
        assert stdout == ""
        assert "error" in stderr

    def test_empty_corpus_exits_2(self, capsys, tmp_path, toy_db_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        code, _, _ = run_cli(
            capsys, "extract-templates",
            "--corpus", str(empty), "--schema", toy_db_path,
            "--out", str(tmp_path / "pool.json"),
        )
        assert code == 2


class TestSynthesize:
    @pytest.fixture
    def pool_file(self, capsys, tmp_path, corpus_file, toy_db_path):
        out = tmp_path / "pool.json"
        assert run_cli(
            capsys, "extract-templates",
            "--corpus", corpus_file, "--schema", toy_db_path, "--out", str(out),
        )[0] == 0
        return str(out)

    def test_seeded_jsonl_reproducible(self, capsys, tmp_path, pool_file, toy_db_path):
        out_a = tmp_path / "a.jsonl"
        out_b = tmp_path / "b.jsonl"
        for out in (out_a, out_b):
            code, stdout, _ = run_cli(
                capsys, "synthesize",
                "--pool", pool_file, "--db", toy_db_path,
                "--n", "10", "--seed", "42", "--out", str(out),
            )
            assert code == 0
            assert json.loads(stdout)["written"] == 10
        assert out_a.read_bytes() == out_b.read_bytes()
        lines = out_a.read_text().splitlines()
        assert len(lines) == 10
        record = json.loads(lines[0])
        assert set(record) == {
            "question", "sql", "db_id", "origin", "template_skeleton", "seed",
        }

    def test_zero_samples_exits_2(self, capsys, tmp_path, pool_file, toy_db_path):
        code, _, _ = run_cli(
            capsys, "synthesize",
            "--pool", pool_file, "--db", toy_db_path,
            "--n", "0", "--out", str(tmp_path / "x.jsonl"),
        )
        assert code == 2

    def test_incompatible_pool_exits_2(self, capsys, tmp_path, toy_db_path):
        pool = tmp_path / "bad_pool.json"
        pool.write_text(
            json.dumps(
                {
                    "templates": [
                        {
                            "skeleton": "SELECT col_boolean_1",
                            "slots": [{"kind": "column", "type": "boolean", "fk": False}],
                            "count": 1,
                        }
                    ]
                }
            )
        )
        code, _, stderr = run_cli(
            capsys, "synthesize",
            "--pool", str(pool), "--db", toy_db_path,
            "--n", "3", "--out", str(tmp_path / "x.jsonl"),
        )
        assert code == 2
        assert "error" in stderr


class TestVerify:
    def test_reports_executable_counts(self, capsys, tmp_path, toy_db_path, toy_schema):
        data = tmp_path / "data.jsonl"
        rows = [
            {"db_id": toy_schema.db_id, "question": "?", "sql": "SELECT name FROM singer"},
            {"db_id": toy_schema.db_id, "question": "?", "sql": "SELECT x FROM ghost"},
        ]
        data.write_text("".join(json.dumps(r) + "\n" for r in rows))
        code, stdout, _ = run_cli(capsys, "verify", "--data", str(data), "--db", toy_db_path)
        assert code == 0
        report = json.loads(stdout)
        assert report["total"] == 2
        assert report["executable"] == 1
        assert report["failures"][0]["line"] == 2


class TestEval:
    def make_predictions(self, tmp_path, db_id, rows):
        path = tmp_path / "preds.jsonl"
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        return str(path)

    def make_db_dir(self, tmp_path, toy_db_path, db_id):
        db_dir = tmp_path / "dbs"
        db_dir.mkdir()
        shutil.copy(toy_db_path, db_dir / f"{db_id}.sqlite")
        return str(db_dir)

    def test_all_gold_predictions(self, capsys, tmp_path, toy_db_path, toy_schema):
        db_id = toy_schema.db_id
        gold = "SELECT name FROM singer WHERE age > 20"
        pred_path = self.make_predictions(
            tmp_path, db_id,
            [{"db_id": db_id, "question": "?", "gold_sql": gold, "pred_sql": gold}] * 3,
        )
        db_dir = self.make_db_dir(tmp_path, toy_db_path, db_id)
        code, stdout, _ = run_cli(
            capsys, "eval", "--pred", pred_path, "--db-dir", db_dir, "--jobs", "1"
        )
        assert code == 0
        assert json.loads(stdout) == {"ex": 1.0}

    def test_parallel_jobs_match_serial(self, capsys, tmp_path, toy_db_path, toy_schema):
        db_id = toy_schema.db_id
        gold = "SELECT name FROM singer WHERE age > 20"
        wrong = "SELECT name FROM singer WHERE age > 99"
        rows = [
            {"db_id": db_id, "question": "?", "gold_sql": gold, "pred_sql": gold},
            {"db_id": db_id, "question": "?", "gold_sql": gold, "pred_sql": wrong},
            {"db_id": db_id, "question": "?", "gold_sql": gold, "pred_sql": gold},
            {"db_id": db_id, "question": "?", "gold_sql": gold, "pred_sql": wrong},
        ]
        pred_path = self.make_predictions(tmp_path, db_id, rows)
        db_dir = self.make_db_dir(tmp_path, toy_db_path, db_id)
        results = []
        for jobs in ("1", "3"):
            code, stdout, _ = run_cli(
                capsys, "eval", "--pred", pred_path, "--db-dir", db_dir, "--jobs", jobs
            )
            assert code == 0
            results.append(json.loads(stdout))
        assert results[0] == results[1] == {"ex": 0.5}

    def test_single_variant_ts_equals_ex(self, capsys, tmp_path, toy_db_path, toy_schema):
        db_id = toy_schema.db_id
        gold = "SELECT name FROM singer WHERE age > 20"
        wrong = "SELECT name FROM singer WHERE age > 99"
        rows = [
            {"db_id": db_id, "question": "?", "gold_sql": gold, "pred_sql": gold},
            {"db_id": db_id, "question": "?", "gold_sql": gold, "pred_sql": wrong},
        ]
        pred_path = self.make_predictions(tmp_path, db_id, rows)
        db_dir = self.make_db_dir(tmp_path, toy_db_path, db_id)
        variants = tmp_path / "variants"
        variants.mkdir()
        shutil.copy(toy_db_path, variants / f"{db_id}.sqlite")
        code, stdout, _ = run_cli(
            capsys, "eval", "--pred", pred_path, "--db-dir", db_dir,
            "--variants", str(variants), "--jobs", "1",
        )
        assert code == 0
        payload = json.loads(stdout)
        assert payload["ts"] == payload["ex"] == 0.5

    def test_malformed_line_exits_2(self, capsys, tmp_path, toy_db_path, toy_schema):
        pred_path = tmp_path / "preds.jsonl"
        pred_path.write_text('{"db_id": "x"}\nnot json\n')
        db_dir = self.make_db_dir(tmp_path, toy_db_path, toy_schema.db_id)
        code, stdout, stderr = run_cli(
            capsys, "eval", "--pred", str(pred_path), "--db-dir", db_dir
        )
        assert code == 2
        assert ":1:" in stderr  # failing line number reported


class TestPipelineCommand:
    def run_pipeline_cli(self, capsys, tmp_path, corpus_file, config_file,
                         toy_db_path, out_name):
        out_dir = tmp_path / out_name
        code, stdout, _ = run_cli(
            capsys, "pipeline",
            "--schema", toy_db_path, "--db", toy_db_path,
            "--corpus", corpus_file, "--config", config_file,
            "--out", str(out_dir),
        )
        return code, stdout, out_dir

    def test_artifacts_written(self, capsys, tmp_path, corpus_file, config_file, toy_db_path):
        code, stdout, out_dir = self.run_pipeline_cli(
            capsys, tmp_path, corpus_file, config_file, toy_db_path, "run"
        )
        assert code == 0
        payload = json.loads(stdout)
        assert payload["out"] == str(out_dir)
        for name in (
            "templates.json",
            "dataset_train.jsonl",
            "dataset_val.jsonl",
            "trajectory.json",
            "summary.csv",
            "accuracy.png",
        ):
            assert (out_dir / name).is_file(), name
        assert (out_dir / "checkpoints" / "space.json").is_file()
        assert list((out_dir / "checkpoints").glob("vbift-*.json"))

    def test_rerun_is_byte_identical(self, capsys, tmp_path, corpus_file,
                                     config_file, toy_db_path):
        _, _, first = self.run_pipeline_cli(
            capsys, tmp_path, corpus_file, config_file, toy_db_path, "run_a"
        )
        _, _, second = self.run_pipeline_cli(
            capsys, tmp_path, corpus_file, config_file, toy_db_path, "run_b"
        )
        files_a = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel

    def test_bad_config_key_exits_2(self, capsys, tmp_path, corpus_file, toy_db_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"n_train": 5, "walrus": True}))
        code, _, stderr = run_cli(
            capsys, "pipeline",
            "--schema", toy_db_path, "--db", toy_db_path,
            "--corpus", corpus_file, "--config", str(bad),
            "--out", str(tmp_path / "out"),
        )
        assert code == 2
        assert "walrus" in stderr


class TestSelfplayCommand:
    def test_smoke_on_pipeline_checkpoints(self, capsys, tmp_path, corpus_file,
                                           config_file, toy_db_path):
        out_dir = tmp_path / "pipe"
        code, _, _ = run_cli(
            capsys, "pipeline",
            "--schema", toy_db_path, "--db", toy_db_path,
            "--corpus", corpus_file, "--config", config_file,
            "--out", str(out_dir),
        )
        assert code == 0
        sp_out = tmp_path / "sp"
        code, stdout, _ = run_cli(
            capsys, "selfplay",
            "--pool-checkpoints", str(out_dir / "checkpoints"),
            "--val", str(out_dir / "dataset_val.jsonl"),
            "--config", config_file, "--out", str(sp_out),
        )
        assert code == 0
        payload = json.loads(stdout)
        assert payload["rounds"] == 2
        assert (sp_out / "trajectory.json").is_file()
        assert (sp_out / "final_policy.json").is_file()
        trajectory = json.loads((sp_out / "trajectory.json").read_text())
        assert isinstance(trajectory, list)
        assert {"round", "main", "opponent", "loss", "pairs"} <= set(trajectory[0])

    def test_missing_checkpoint_dir_exits_2(self, capsys, tmp_path, config_file):
        code, _, _ = run_cli(
            capsys, "selfplay",
            "--pool-checkpoints", str(tmp_path / "ghost"),
            "--val", str(tmp_path / "val.jsonl"),
            "--config", config_file, "--out", str(tmp_path / "out"),
        )
        assert code == 2

    def test_zero_iterations_config_exits_2(self, capsys, tmp_path, toy_db_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"selfplay_iterations": 0, "db": str(toy_db_path)}))
        code, _, _ = run_cli(
            capsys, "selfplay",
            "--pool-checkpoints", str(tmp_path),
            "--val", str(tmp_path / "val.jsonl"),
            "--config", str(bad), "--out", str(tmp_path / "out"),
        )
        assert code == 2


class TestCliContract:
    def test_stdout_is_json_only(self, capsys, tmp_path, toy_db_path, toy_schema):
        data = tmp_path / "data.jsonl"
        data.write_text(
            json.dumps({"db_id": toy_schema.db_id, "question": "?", "sql": "SELECT 1"})
            + "\n"
        )
        code, stdout, _ = run_cli(capsys, "verify", "--data", str(data), "--db", toy_db_path)
        assert code == 0
        json.loads(stdout)  # the whole stream is one JSON document
        assert stdout.count("\n") == 1

    def test_unknown_flag_exits_2(self, tmp_path):
        process = subprocess.run(
            [sys.executable, "-m", "sqlarena.cli", "verify", "--data", "x", "--db", "y",
             "--frobnicate"],
            capture_output=True,
            text=True,
        )
        assert process.returncode == 2

    def test_console_entrypoint_help(self):
        process = subprocess.run(
            [sys.executable, "-m", "sqlarena.cli", "--help"],
            capture_output=True,
            text=True,
        )
        assert process.returncode == 0
        for command in ("extract-templates", "synthesize", "verify", "eval",
                        "selfplay", "pipeline"):
            assert command in process.stdout
