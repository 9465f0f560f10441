"""Command-line surface over every pipeline stage.

Subcommands: extract-templates, synthesize, verify, eval, selfplay,
pipeline.  Stdout carries a single machine-readable JSON object; human
prose and progress go to stderr.  Exit codes: 0 success, 2 usage or
input error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import EmptyInput, SqlArenaError
from .executor import Database, EvalContext, ExecConfig, classify, execute, ts_accuracy
from .pipeline import PipelineConfig, remap_db_id, run_pipeline
from .report import write_accuracy_figure, write_summary_csv
from .samples import (
    read_predictions_jsonl,
    read_samples_jsonl,
    write_samples_jsonl,
)
from .schema import load_schema
from .selfplay import PolicyRecord, policy_val_accuracy, run_self_play
from .synthesizer import synthesize_dataset
from .template import build_pool, load_pool, save_pool
from .toypolicy import CandidateSpace, load_policy, save_policy

logger = logging.getLogger("sqlarena")

_DB_SUFFIXES = (".sqlite", ".db", ".sqlite3")


def _load_schema_any(path: str):
    kind = "schema_json" if path.endswith(".json") else "database_file"
    return load_schema(path, kind)


def _open_db_dir(path: str) -> dict[str, Database]:
    root = Path(path)
    if not root.is_dir():
        raise EmptyInput(f"{path!r} is not a directory")
    lookup = {
        f.stem: Database(str(f))
        for f in sorted(root.iterdir())
        if f.suffix in _DB_SUFFIXES
    }
    if not lookup:
        raise EmptyInput(f"no database files in {path!r}")
    return lookup


def cmd_extract_templates(args) -> dict:
    schema = _load_schema_any(args.schema)
    corpus = read_samples_jsonl(args.corpus)
    if not corpus:
        raise EmptyInput(f"corpus {args.corpus!r} is empty")
    lookup = {sample.db_id: schema for sample in corpus}
    pool = build_pool(corpus, lookup)
    save_pool(pool, args.out)
    logger.info("wrote %d templates to %s", len(pool.templates), args.out)
    return {
        "templates": len(pool.templates),
        "total_count": pool.total_count,
        "skipped": len(pool.skipped),
        "out": args.out,
    }


def cmd_synthesize(args) -> dict:
    pool = load_pool(args.pool)
    schema = load_schema(args.db, "database_file")
    db = Database(args.db)
    rng = np.random.default_rng(args.seed)
    samples = synthesize_dataset(pool, schema, db, args.n, rng)
    samples = [replace(s, seed=args.seed) for s in samples]
    write_samples_jsonl(samples, args.out)
    logger.info("wrote %d samples to %s", len(samples), args.out)
    return {"written": len(samples), "out": args.out}


def cmd_verify(args) -> dict:
    db = Database(args.db)
    samples = read_samples_jsonl(args.data)
    if not samples:
        raise EmptyInput(f"no samples in {args.data!r}")
    failures = []
    for line_no, sample in enumerate(samples, start=1):
        try:
            execute(db, sample.sql)
        except SqlArenaError as exc:
            failures.append({"line": line_no, "error": str(exc)})
    return {
        "total": len(samples),
        "executable": len(samples) - len(failures),
        "failures": failures,
    }


def _parallel_ex(db_paths: dict[str, str], pairs, config: ExecConfig, jobs: int):
    """Classify predictions across jobs threads, one connection set each."""
    chunks = [pairs[i::jobs] for i in range(jobs)]

    def work(chunk):
        local = {db_id: Database(path) for db_id, path in db_paths.items()}
        hits = 0
        for sample, pred in chunk:
            verdict = classify(local[sample.db_id], sample.sql, pred, config)
            if verdict.kind == "correct":
                hits += 1
        return hits

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        correct = sum(pool.map(work, chunks))
    return correct / len(pairs)


def cmd_eval(args) -> dict:
    pairs = read_predictions_jsonl(args.pred)
    if not pairs:
        raise EmptyInput(f"no predictions in {args.pred!r}")
    primary = _open_db_dir(args.db_dir)
    for sample, _ in pairs:
        if sample.db_id not in primary:
            raise EmptyInput(f"no database for db_id {sample.db_id!r} in {args.db_dir!r}")
    config = ExecConfig()
    jobs = max(1, args.jobs)
    if jobs > 1:
        paths = {db_id: db.path for db_id, db in primary.items()}
        ex = _parallel_ex(paths, pairs, config, jobs)
    else:
        correct = sum(
            1
            for sample, pred in pairs
            if classify(primary[sample.db_id], sample.sql, pred, config).kind
            == "correct"
        )
        ex = correct / len(pairs)
    payload = {"ex": ex}
    if args.variants:
        variant_lookups = _variant_lookups(args.variants)
        total = 0.0
        for db_id in sorted({sample.db_id for sample, _ in pairs}):
            group = [(s, p) for s, p in pairs if s.db_id == db_id]
            variant_dbs = [primary[db_id]]
            for lookup in variant_lookups:
                if db_id not in lookup:
                    raise EmptyInput(
                        f"variant set is missing a database for {db_id!r}"
                    )
                variant_dbs.append(lookup[db_id])
            total += ts_accuracy(variant_dbs, group, config) * len(group)
        payload["ts"] = total / len(pairs)
    return payload


def _variant_lookups(path: str) -> list[dict[str, Database]]:
    root = Path(path)
    if not root.is_dir():
        raise EmptyInput(f"{path!r} is not a directory")
    subdirs = sorted(d for d in root.iterdir() if d.is_dir())
    if subdirs:
        return [_open_db_dir(str(d)) for d in subdirs]
    # A flat directory of database files is a single variant.
    return [_open_db_dir(str(root))]


def cmd_selfplay(args) -> dict:
    config = PipelineConfig.from_file(args.config)
    if config.db is None:
        raise EmptyInput("config must set a 'db' path for self-play evaluation")
    checkpoint_dir = Path(args.pool_checkpoints)
    space_path = checkpoint_dir / "space.json"
    if not space_path.is_file():
        raise EmptyInput(f"missing candidate space file {space_path}")
    with open(space_path, encoding="utf-8") as handle:
        space = CandidateSpace.from_dict(json.load(handle))
    val = read_samples_jsonl(args.val)
    if not val:
        raise EmptyInput(f"no validation samples in {args.val!r}")
    db = Database(config.db)
    ctx = EvalContext(
        {db_id: db for db_id in {s.db_id for s in val}}, config.exec_config
    )
    records = []
    policy_files = sorted(
        f for f in checkpoint_dir.glob("*.json") if f.name != "space.json"
    )
    if not policy_files:
        raise EmptyInput(f"no policy checkpoints in {args.pool_checkpoints!r}")
    for index, policy_file in enumerate(policy_files):
        policy, extra = load_policy(str(policy_file), space)
        accuracy = policy_val_accuracy(policy, val, ctx)
        records.append(
            PolicyRecord(
                policy,
                accuracy,
                int(extra.get("round", index)),
                str(extra.get("label", policy_file.stem)),
            )
        )
    result = run_self_play(records, val, space, config.selfplay_config(), ctx)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    trajectory = [report.to_dict() for report in result.rounds]
    _write_json(out_dir / "trajectory.json", trajectory)
    save_policy(
        result.final.policy,
        str(out_dir / "final_policy.json"),
        extra={"label": result.final.label, "val_accuracy": result.final.val_accuracy},
    )
    combined = {"vbift": [], "selfplay": trajectory}
    write_summary_csv(combined, str(out_dir / "summary.csv"))
    write_accuracy_figure(combined, str(out_dir / "accuracy.png"))
    return {
        "final": result.final.label,
        "val_accuracy": result.final.val_accuracy,
        "rounds": len(result.rounds),
        "out": str(out_dir),
    }


def cmd_pipeline(args) -> dict:
    schema = _load_schema_any(args.schema)
    db = Database(args.db)
    corpus = remap_db_id(read_samples_jsonl(args.corpus), schema.db_id)
    if not corpus:
        raise EmptyInput(f"corpus {args.corpus!r} is empty")
    config = PipelineConfig.from_file(args.config)
    result = run_pipeline(schema, db, corpus, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_pool(result.state.template_pool, str(out_dir / "templates.json"))
    write_samples_jsonl(result.state.train_history, str(out_dir / "dataset_train.jsonl"))
    write_samples_jsonl(result.state.val, str(out_dir / "dataset_val.jsonl"))
    checkpoints = out_dir / "checkpoints"
    checkpoints.mkdir(exist_ok=True)
    _write_json(checkpoints / "space.json", result.state.space.to_dict())
    for record in result.model_pool:
        save_policy(
            record.policy,
            str(checkpoints / f"{record.label}.json"),
            extra={
                "label": record.label,
                "round": record.round,
                "val_accuracy": record.val_accuracy,
            },
        )
    _write_json(out_dir / "trajectory.json", result.trajectory)
    write_summary_csv(result.trajectory, str(out_dir / "summary.csv"))
    write_accuracy_figure(result.trajectory, str(out_dir / "accuracy.png"))
    logger.info("pipeline artifacts in %s", out_dir)
    return {
        "out": str(out_dir),
        "final": result.final.label,
        "final_val_accuracy": result.final.val_accuracy,
        "vbift_rounds": len(result.trajectory["vbift"]),
        "selfplay_rounds": len(result.trajectory["selfplay"]),
    }


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqlarena",
        description="Schema-driven SQL synthesis, execution evaluation and self-play.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-templates", help="build a template pool from a corpus")
    p.add_argument("--corpus", required=True, help="corpus JSONL path")
    p.add_argument("--schema", required=True, help="schema JSON or database file")
    p.add_argument("--out", required=True, help="output pool JSON path")
    p.set_defaults(func=cmd_extract_templates)

    p = sub.add_parser("synthesize", help="instantiate templates into a dataset")
    p.add_argument("--pool", required=True, help="template pool JSON path")
    p.add_argument("--db", required=True, help="database file")
    p.add_argument("--n", required=True, type=int, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("verify", help="check that dataset SQL executes")
    p.add_argument("--data", required=True, help="dataset JSONL path")
    p.add_argument("--db", required=True, help="database file")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="execution accuracy of predictions")
    p.add_argument("--pred", required=True, help="predictions JSONL path")
    p.add_argument("--db-dir", required=True, help="directory of <db_id> databases")
    p.add_argument("--variants", help="directory of augmented database variants")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel classification workers")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selfplay", help="run self-play over a policy pool")
    p.add_argument("--pool-checkpoints", required=True,
                   help="directory with space.json and policy checkpoints")
    p.add_argument("--val", required=True, help="validation JSONL path")
    p.add_argument("--config", required=True, help="config JSON/TOML path")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_selfplay)

    p = sub.add_parser("pipeline", help="full feedback + self-play run")
    p.add_argument("--schema", required=True, help="schema JSON or database file")
    p.add_argument("--db", required=True, help="database file")
    p.add_argument("--corpus", required=True, help="seed corpus JSONL path")
    p.add_argument("--config", required=True, help="config JSON/TOML path")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        payload = args.func(args)
    except (SqlArenaError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - invariant violations
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(payload))
    return 0


if __name__ == "__main__":
    sys.exit(main())
