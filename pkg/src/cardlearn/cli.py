"""Command-line entry point: gen-data, gen-workload, train, estimate, evaluate, inspect.

Only the two ``gen-*`` subcommands import the data-access code; everything else
works from the schema, workload files and checkpoints alone.

Exit codes: 0 success, 2 bad input (flags, files, formats), 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from collections import Counter
from pathlib import Path

from .query import QueryError
from .schema import SchemaError, canonical_template, load_schema, save_schema

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3


class InputError(Exception):
    """Bad flags or file contents; reported with exit code 2."""


def _err(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _load_json(path: str, what: str) -> dict:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}:{exc.lineno}: {what}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise InputError(f"{p}:1: {what} must be a JSON object")
    return data


def _write_jsonl(path: str | None, records) -> None:
    fh = sys.stdout if path in (None, "-") else open(path, "w", encoding="utf-8", newline="\n")
    try:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()


# ---------------------------------------------------------------------------
# gen-data / gen-workload (the only subcommands that touch table contents)
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .oracle import GenConfig, export_dataset, toy_fixture, generate_dataset

    if args.fixture:
        dataset = toy_fixture()
        schema = dataset.schema
    else:
        if not args.schema:
            raise InputError("gen-data: need --fixture or --schema")
        schema = load_schema(args.schema)
        config = GenConfig()
        if args.gen_config:
            try:
                config = GenConfig.from_dict(_load_json(args.gen_config, "generator config"))
            except (TypeError, ValueError) as exc:
                raise InputError(f"{args.gen_config}: {exc}") from None
        dataset = generate_dataset(schema, config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_schema(schema, out / "schema.json")
    paths = export_dataset(dataset, out)
    _err(f"wrote schema and {len(paths)} table file(s) to {out}")
    return EXIT_OK


def cmd_gen_workload(args) -> int:
    from .oracle import import_dataset
    from .schema import JoinTemplate, all_join_templates
    from .workload import (
        GranularityLaw,
        WorkloadSpec,
        apply_tcr_split,
        generate_workload,
        imbalance_workload,
        measure_tcr_cir,
        write_workload,
    )

    schema = load_schema(args.schema)
    dataset = import_dataset(schema, args.data)
    joins = all_join_templates(schema, max_tables=args.max_tables)
    meta: dict = {"seed": args.seed}
    templates = list(joins)
    if args.tcr is not None:
        if not joins:
            raise InputError("gen-workload: --tcr needs a schema with join templates")
        templates, _ = apply_tcr_split(joins, args.tcr, args.seed)
        meta["train_templates"] = [t.to_dict() for t in templates]
    if args.include_single or not templates:
        templates += [JoinTemplate((t.name,)) for t in schema.tables]
    if args.granularity is None:
        law = GranularityLaw()
    elif args.granularity == "shifted":
        law = GranularityLaw("uniform_excluding")
    else:
        law = GranularityLaw("constant", float(args.granularity))
    spec = WorkloadSpec(tuple(templates), args.queries_per_template, granularity=law)
    t0 = time.perf_counter()
    workload = generate_workload(dataset, spec, args.seed)
    if args.cir is not None:
        workload = imbalance_workload(workload, schema, args.cir)
    meta["spec"] = spec.to_dict()
    if joins and any(len(lq.query.table_refs) > 1 for lq in workload):
        tcr, cir = measure_tcr_cir(workload, schema, joins)
        meta["tcr"], meta["cir"] = tcr, cir
    write_workload(args.out, workload, meta)
    _err(f"wrote {len(workload)} queries to {args.out} in {time.perf_counter() - t0:.2f}s")
    return EXIT_OK


# ---------------------------------------------------------------------------
# model subcommands
# ---------------------------------------------------------------------------


_TRAIN_FLAGS = {
    "n_lcs": ("model", int),
    "n_h": ("model", int),
    "cardest": ("model", str),
    "bins": ("model", int),
    "epochs": ("train", int),
    "batch_size": ("train", int),
    "lr": ("train", float),
    "patience": ("train", int),
    "loss": ("train", str),
}


def _train_configs(args):
    from .bundle import ModelConfig
    from .trainer import TrainConfig

    model, train = {}, {}
    if args.config:
        raw = _load_json(args.config, "train config")
        unknown = set(raw) - set(_TRAIN_FLAGS) - {"seed"}
        if unknown:
            raise InputError(f"{args.config}: unknown field(s) {sorted(unknown)}")
        for k, v in raw.items():
            if k == "seed":
                continue
            section, kind = _TRAIN_FLAGS[k]
            try:
                (model if section == "model" else train)[k] = kind(v)
            except (TypeError, ValueError):
                raise InputError(f"{args.config}: field {k!r} has invalid value {v!r}") from None
        if "seed" in raw and args.seed is None:
            args.seed = int(raw["seed"])
    for k, (section, _) in _TRAIN_FLAGS.items():
        v = getattr(args, k)
        if v is not None:
            (model if section == "model" else train)[k] = v
    seed = args.seed if args.seed is not None else 0
    if "cardest" in model:
        model["cardest_kind"] = model.pop("cardest")
    if "epochs" in train:
        train["max_epochs"] = train.pop("epochs")
    try:
        return ModelConfig(seed=seed, **model), TrainConfig(seed=seed, **train)
    except (TypeError, ValueError) as exc:
        raise InputError(f"train: {exc}") from None


def _read(path: str, schema, labeled: bool = True):
    from .workload_io import read_workload

    return read_workload(path, schema, labeled=labeled)


def cmd_train(args) -> int:
    from .bundle import ModelBundle
    from .checkpoint import save_checkpoint
    from .encoding import fit_normalizers
    from .trainer import fit

    schema = load_schema(args.schema)
    workload = _read(args.workload, schema)
    model_config, train_config = _train_configs(args)
    bundle = ModelBundle.build(schema, fit_normalizers(schema, workload), model_config)

    def progress(m):
        val = "n/a" if m.val_loss is None else f"{m.val_loss:.4f}"
        _err(f"epoch {m.epoch:3d} train {m.train_loss:.4f} val {val} fallback {m.negative_rate:.3f} ({m.seconds:.1f}s)")

    report = fit(bundle, workload, train_config, progress=None if args.quiet else progress)
    save_checkpoint(bundle, args.out, train_config.to_dict())
    record = {"train": report.to_dict(), "model_config": model_config.to_dict(), "train_config": train_config.to_dict()}
    if args.report:
        Path(args.report).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(f"best epoch {report.best_epoch} loss {report.best_loss:.6f} after {len(report.epochs)} epoch(s), {report.seconds:.1f}s")
    return EXIT_OK


def _estimator(args):
    from .checkpoint import load_checkpoint
    from .composer import Estimator

    schema = load_schema(args.schema)
    bundle = load_checkpoint(args.checkpoint, schema)
    return schema, Estimator(schema, bundle)


def cmd_estimate(args) -> int:
    from .composer import EstimateCache

    schema, estimator = _estimator(args)
    queries = _read(args.workload, schema, labeled=False)
    t0 = time.perf_counter()
    records = []
    if args.subqueries:
        cache = EstimateCache()
        for i, q in enumerate(queries):
            for aliases, template, value in estimator.estimate_all_subqueries(q, cache):
                records.append({"query": i, "aliases": sorted(aliases), "template": template.key(), "estimate": value})
    else:
        est, neg = estimator.estimate_many(queries)
        for i, q in enumerate(queries):
            records.append(
                {"query": i, "template": canonical_template(schema, q).key(), "estimate": float(est[i]), "negative": bool(neg[i])}
            )
    _write_jsonl(args.out, records)
    _err(f"{len(records)} estimate record(s) in {time.perf_counter() - t0:.2f}s")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluator import evaluate_split
    from .workload_io import WorkloadFormatError

    schema, estimator = _estimator(args)
    workload = _read(args.workload, schema)
    seen = []
    if args.train_workload:
        header = json.loads(Path(args.train_workload).read_text().splitlines()[0])
        listed = header.get("meta", {}).get("train_templates")
        if listed is not None:
            from .schema import JoinTemplate

            try:
                seen = [JoinTemplate.from_dict(t) for t in listed]
            except (KeyError, TypeError, ValueError) as exc:
                raise WorkloadFormatError(f"{args.train_workload}:1: field 'meta.train_templates': {exc}") from None
        else:
            seen = sorted({canonical_template(schema, lq.query) for lq in _read(args.train_workload, schema)}, key=lambda t: t.key())
    report = evaluate_split(estimator, workload, schema, seen)
    print(report.summary())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if args.dump:
        from dataclasses import asdict

        _write_jsonl(args.dump, (asdict(r) for r in report.records))
    return EXIT_OK


def cmd_inspect(args) -> int:
    schema = load_schema(args.schema)
    out: dict = {"schema": {"fingerprint": schema.fingerprint(), "tables": {t.name: t.cardinality for t in schema.tables}}}
    if args.checkpoint:
        from .checkpoint import load_checkpoint

        bundle = load_checkpoint(args.checkpoint, schema)
        out["checkpoint"] = {
            "model_config": bundle.config.to_dict(),
            "tables": {
                t: {
                    "cardest": bundle.cardest[t].kind,
                    "parameters": int(sum(p.data.size for p in bundle.table_parameters(t))),
                }
                for t in sorted(bundle.cardest)
            },
        }
    if args.workload:
        workload = _read(args.workload, schema)
        counts = Counter(canonical_template(schema, lq.query).key() for lq in workload)
        out["workload"] = {"queries": len(workload), "templates": dict(sorted(counts.items()))}
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cardlearn", description="Learned join cardinality estimation from per-table models.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate (or write the built-in fixture) a dataset")
    g.add_argument("--fixture", choices=["toy"], help="write the small three-table fixture")
    g.add_argument("--schema", help="schema JSON file")
    g.add_argument("--gen-config", help="generator config JSON file")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    w = sub.add_parser("gen-workload", help="synthesize a labeled workload")
    w.add_argument("--schema", required=True)
    w.add_argument("--data", required=True, help="dataset directory written by gen-data")
    w.add_argument("--out", required=True)
    w.add_argument("--queries-per-template", type=int, default=100)
    w.add_argument("--granularity", help="range width: a number in (0, 1], or 'shifted' to exclude [0.45, 0.55]")
    w.add_argument("--tcr", type=float, help="keep only this fraction of join templates")
    w.add_argument("--cir", type=float, help="skew per-template counts to this max/min ratio")
    w.add_argument("--max-tables", type=int, help="largest join template size")
    w.add_argument("--include-single", action="store_true", help="add single-table templates")
    w.add_argument("--seed", type=int, default=0)
    w.set_defaults(func=cmd_gen_workload)

    t = sub.add_parser("train", help="train per-table models from a labeled workload")
    t.add_argument("--schema", required=True)
    t.add_argument("--workload", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--report", help="training report JSON path")
    t.add_argument("--config", help="JSON file with defaults for the flags below")
    t.add_argument("--n-lcs", type=int)
    t.add_argument("--n-h", type=int)
    t.add_argument("--cardest", choices=["auto", "arcdf", "set"])
    t.add_argument("--bins", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--patience", type=int)
    t.add_argument("--loss", choices=["sle", "se", "mixed"])
    t.add_argument("--seed", type=int)
    t.add_argument("--quiet", action="store_true", help="no per-epoch progress")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", help="estimate cardinalities for a workload file")
    e.add_argument("--schema", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--workload", required=True)
    e.add_argument("--out", help="output JSONL path (default stdout)")
    e.add_argument("--subqueries", action="store_true", help="one record per connected subquery")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("evaluate", help="Q-error report on a labeled workload")
    v.add_argument("--schema", required=True)
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--workload", required=True)
    v.add_argument("--train-workload", help="training workload; its templates count as seen")
    v.add_argument("--out", help="report JSON path")
    v.add_argument("--dump", help="per-query JSONL path")
    v.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("inspect", help="summarize a schema, checkpoint or workload")
    i.add_argument("--schema", required=True)
    i.add_argument("--checkpoint")
    i.add_argument("--workload")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    from .checkpoint import CheckpointError
    from .trainer import TrainingError

    try:
        return args.func(args)
    except (InputError, SchemaError, QueryError, CheckpointError, FileNotFoundError, IsADirectoryError) as exc:
        _err(f"error: {exc}")
        return EXIT_INPUT
    except TrainingError as exc:
        _err(f"training failed: {exc}")
        return EXIT_RUNTIME
    except ValueError as exc:
        # format errors from the workload and dataset readers subclass ValueError
        _err(f"error: {exc}")
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        _err(f"runtime failure: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
