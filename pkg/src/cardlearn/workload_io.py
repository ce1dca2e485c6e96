"""Workload files: a version header line, then one JSON query record per line.

Kept apart from the generator so that reading workloads never pulls in the
data-access code.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from .query import LabeledQuery, Query, QueryError

WORKLOAD_FORMAT = "cardlearn-workload"
WORKLOAD_VERSION = 1


class WorkloadFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------


def write_workload(path: str | Path, workload: Sequence[LabeledQuery], meta: dict | None = None) -> None:
    header = {"format": WORKLOAD_FORMAT, "version": WORKLOAD_VERSION, "count": len(workload)}
    if meta:
        header["meta"] = meta
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for lq in workload:
            fh.write(json.dumps(lq.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")


def read_workload(path: str | Path, schema: Schema | None = None, labeled: bool = True) -> list:
    """Parse a workload file; with ``schema`` every query is validated. Errors name file and line."""
    from .schema import query_graph

    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise WorkloadFormatError(f"{path}:1: empty workload file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise WorkloadFormatError(f"{path}:1: bad header ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("format") != WORKLOAD_FORMAT:
        raise WorkloadFormatError(f"{path}:1: field 'format' must be {WORKLOAD_FORMAT!r}")
    if header.get("version") != WORKLOAD_VERSION:
        raise WorkloadFormatError(f"{path}:1: field 'version' {header.get('version')!r} unsupported")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise QueryError("record must be an object")
            if labeled:
                item = LabeledQuery.from_dict(record)
                q = item.query
            else:
                record = {k: v for k, v in record.items() if k != "cardinality"}
                item = q = Query.from_dict(record)
            if schema is not None:
                query_graph(schema, q)
        except json.JSONDecodeError as exc:
            raise WorkloadFormatError(f"{path}:{lineno}: {exc.msg}") from None
        except (QueryError, ValueError, TypeError) as exc:
            raise WorkloadFormatError(f"{path}:{lineno}: {exc}") from None
        out.append(item)
    return out
