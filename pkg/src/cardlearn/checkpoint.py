"""JSON checkpoints: architecture metadata, flat parameter arrays and normalizer state.

Floats are written with ``repr`` precision, so load(save(m)) is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

from .bundle import ModelBundle, ModelConfig
from .cardest import params_from_dict, params_to_dict
from .encoding import NormalizerSet
from .schema import Schema

CHECKPOINT_FORMAT = "cardlearn-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def bundle_to_dict(bundle: ModelBundle, train_config: dict | None = None) -> dict:
    tables = {}
    for t in sorted(bundle.cardest):
        m = bundle.cardest[t]
        entry = {"cardest": {"kind": m.kind, "meta": m.meta(), "params": params_to_dict(m.params)}}
        if t in bundle.lcs:
            l = bundle.lcs[t]
            entry["lcs"] = {"meta": l.meta(), "params": params_to_dict(l.params)}
        tables[t] = entry
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "schema_fingerprint": bundle.schema.fingerprint(),
        "model_config": bundle.config.to_dict(),
        "normalizers": bundle.normalizers.to_dict(),
        "train_config": train_config or {},
        "tables": tables,
    }


def bundle_from_dict(data: dict, schema: Schema, source: str = "<checkpoint>") -> ModelBundle:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{source}: field 'format' is not {CHECKPOINT_FORMAT!r}")
    if data.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{source}: field 'version' {data.get('version')!r} unsupported")
    if data.get("schema_fingerprint") != schema.fingerprint():
        raise CheckpointError(f"{source}: field 'schema_fingerprint' does not match the schema")
    try:
        config = ModelConfig.from_dict(data["model_config"])
        normalizers = NormalizerSet.from_dict(data["normalizers"])
        bundle = ModelBundle.build(schema, normalizers, config)
        tables = data["tables"]
        if set(tables) != set(bundle.cardest):
            raise CheckpointError(f"{source}: field 'tables' lists {sorted(tables)}, schema has {sorted(bundle.cardest)}")
        for t, entry in tables.items():
            model = bundle.cardest[t]
            if entry["cardest"]["kind"] != model.kind:
                raise CheckpointError(f"{source}: field 'tables.{t}.cardest.kind' mismatch")
            params_from_dict(entry["cardest"]["params"], model.params)
            if t in bundle.lcs:
                params_from_dict(entry["lcs"]["params"], bundle.lcs[t].params)
    except KeyError as exc:
        raise CheckpointError(f"{source}: missing field {exc}") from None
    except ValueError as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{source}: {exc}") from None
    return bundle


def save_checkpoint(bundle: ModelBundle, path: str | Path, train_config: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bundle_to_dict(bundle, train_config), fh, separators=(",", ":"))


def load_checkpoint(path: str | Path, schema: Schema) -> ModelBundle:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return bundle_from_dict(data, schema, str(path))
