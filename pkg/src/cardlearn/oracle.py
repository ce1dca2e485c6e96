"""Ground truth: synthetic data generation and exact brute-force query evaluation.

This is the only module that touches rows. The estimator side never imports it
outside of tests and the data-generating CLI subcommands.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from .query import AliasQuery, Query, QueryError
from .schema import Column, JoinKeyGroup, Schema, SchemaError, Table, query_graph
from .seeding import rng_for

TABLE_FORMAT = "cardlearn-table"
TABLE_VERSION = 1
STRING_ALPHABET = "abcdefgh"
STRING_LENGTH = 6


class DatasetFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


class Dataset:
    """Column-major row store; numeric columns are int64, others object arrays (None = NULL)."""

    def __init__(self, schema: Schema, columns: Mapping[str, Mapping[str, np.ndarray]], seed: int = 0) -> None:
        self.schema = schema
        self.seed = int(seed)
        self.columns: dict[str, dict[str, np.ndarray]] = {}
        for table in schema.tables:
            if table.name not in columns:
                raise DatasetFormatError(f"dataset lacks table {table.name!r}")
            cols = {}
            for col in table.columns:
                arr = columns[table.name][col.name]
                arr = np.asarray(arr, dtype=np.int64) if col.is_numeric else np.asarray(arr, dtype=object)
                if arr.shape != (table.cardinality,):
                    raise DatasetFormatError(
                        f"{table.name}.{col.name}: {arr.shape[0]} rows, schema says {table.cardinality}"
                    )
                if col.is_numeric and col.domain_hint is not None and arr.size:
                    lo, hi = col.domain_hint
                    if arr.min() < lo or arr.max() > hi:
                        raise DatasetFormatError(f"{table.name}.{col.name}: values outside domain_hint {col.domain_hint}")
                cols[col.name] = arr
            self.columns[table.name] = cols
        self._dict_cache: dict[tuple[str, str], tuple[list, np.ndarray]] = {}
        self._key_domains = {g.id: self._group_domain(g) for g in schema.groups}
        self._key_codes: dict[tuple[str, str], np.ndarray] = {}
        for g in schema.groups:
            index = {v: i for i, v in enumerate(self._key_domains[g.id])}
            for t, c in g.members:
                arr = self.columns[t][c]
                self._key_codes[(t, c)] = np.fromiter((index.get(v, -1) if v is not None else -1 for v in arr), np.int64, arr.size)

    def _group_domain(self, group: JoinKeyGroup) -> list:
        values = set()
        for t, c in group.members:
            values.update(v for v in self.columns[t][c].tolist() if v is not None)
        return sorted(values)

    def key_domain(self, group: str) -> list:
        return list(self._key_domains[group])

    def key_codes(self, table: str, column: str) -> np.ndarray:
        return self._key_codes[(table, column)]

    def rows(self, table: str) -> list[tuple]:
        cols = [self.columns[table][c.name].tolist() for c in self.schema.table(table).columns]
        return list(zip(*cols)) if cols else []

    def dictionary(self, table: str, column: str) -> tuple[list, np.ndarray]:
        """Distinct non-NULL values and per-row codes (-1 for NULL), cached."""
        key = (table, column)
        if key not in self._dict_cache:
            arr = self.columns[table][column]
            uniq = sorted({v for v in arr.tolist() if v is not None})
            index = {v: i for i, v in enumerate(uniq)}
            codes = np.fromiter((-1 if v is None else index[v] for v in arr.tolist()), np.int64, arr.size)
            self._dict_cache[key] = (uniq, codes)
        return self._dict_cache[key]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset) or self.schema != other.schema:
            return False
        return all(
            np.array_equal(self.columns[t][c], other.columns[t][c]) for t in self.columns for c in self.columns[t]
        )


@dataclass(frozen=True)
class FrequencyVector:
    counts: dict
    total: int

    def distribution(self, domain: list) -> np.ndarray:
        if self.total == 0:
            return np.zeros(len(domain))
        return np.array([self.counts.get(k, 0) for k in domain], dtype=np.float64) / self.total


# ---------------------------------------------------------------------------
# fixture and generator
# ---------------------------------------------------------------------------


def toy_schema() -> Schema:
    def table(name: str, attr: str, hint: tuple[int, int]) -> Table:
        return Table(name, (Column("x", "numeric-integer", (0, 2)), Column(attr, "numeric-integer", hint)), 5)

    tables = (table("A", "a", (0, 5)), table("B", "b", (0, 5)), table("D", "d", (0, 7)))
    return Schema(tables, (JoinKeyGroup("x", frozenset({("A", "x"), ("B", "x"), ("D", "x")})),))


def toy_fixture() -> Dataset:
    """Three five-row tables joined on x; the worked example everything is checked against."""
    data = {
        "A": {"x": [1, 2, 1, 1, 2], "a": [1, 2, 3, 4, 5]},
        "B": {"x": [1, 1, 2, 1, 2], "b": [2, 2, 3, 4, 4]},
        "D": {"x": [1, 1, 1, 2, 2], "d": [4, 5, 5, 6, 7]},
    }
    return Dataset(toy_schema(), data, seed=0)


@dataclass
class TableGen:
    key_skew: dict[str, float] = field(default_factory=dict)
    key_shift: dict[str, int] = field(default_factory=dict)
    unique_keys: tuple[str, ...] = ()
    correlation: dict[str, float] = field(default_factory=dict)
    correlate_with: dict[str, str] = field(default_factory=dict)
    null_fraction: dict[str, float] = field(default_factory=dict)


@dataclass
class GenConfig:
    """Generator knobs; group domains default to the members' numeric domain hints."""

    group_domains: dict[str, int] = field(default_factory=dict)
    tables: dict[str, TableGen] = field(default_factory=dict)
    default_correlation: float = 0.0
    default_skew: float = 0.0

    @classmethod
    def from_dict(cls, data: Mapping) -> "GenConfig":
        allowed = {"group_domains", "tables", "default_correlation", "default_skew"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"gen config: unknown field(s) {sorted(unknown)}")
        tables = {}
        tallowed = set(TableGen.__dataclass_fields__)
        for name, spec in data.get("tables", {}).items():
            bad = set(spec) - tallowed
            if bad:
                raise ValueError(f"gen config tables.{name}: unknown field(s) {sorted(bad)}")
            spec = dict(spec)
            spec["unique_keys"] = tuple(spec.get("unique_keys", ()))
            tables[name] = TableGen(**spec)
        return cls(
            {k: int(v) for k, v in data.get("group_domains", {}).items()},
            tables,
            float(data.get("default_correlation", 0.0)),
            float(data.get("default_skew", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "group_domains": dict(self.group_domains),
            "tables": {
                k: {
                    "key_skew": v.key_skew,
                    "key_shift": v.key_shift,
                    "unique_keys": list(v.unique_keys),
                    "correlation": v.correlation,
                    "correlate_with": v.correlate_with,
                    "null_fraction": v.null_fraction,
                }
                for k, v in sorted(self.tables.items())
            },
            "default_correlation": self.default_correlation,
            "default_skew": self.default_skew,
        }


def _group_domain_size(schema: Schema, gid: str, config: GenConfig) -> int:
    if gid in config.group_domains:
        size = config.group_domains[gid]
    else:
        sizes = []
        for t, c in schema.group(gid).members:
            col = schema.table(t).column(c)
            if col.is_numeric and col.domain_hint is not None:
                sizes.append(col.domain_hint[1] - col.domain_hint[0])
            elif col.kind == "categorical" and col.domain_hint is not None:
                sizes.append(col.domain_hint)
        if not sizes:
            raise ValueError(f"group {gid!r}: no domain size configured or hinted")
        size = min(sizes)
    if size < 1:
        raise ValueError(f"group {gid!r}: domain size {size} < 1")
    return int(size)


def zipf_probs(size: int, s: float) -> np.ndarray:
    p = np.arange(1, size + 1, dtype=np.float64) ** (-float(s))
    return p / p.sum()


def generate_dataset(schema: Schema, config: GenConfig | None = None, seed: int = 0) -> Dataset:
    """Seeded synthetic instance.

    Join keys take values 1..D (D the group domain size, with zipf rank skew
    optionally rotated by ``key_shift``). Filterable attributes are noisy
    monotone functions of the key rank: z = rho * u_key + (1 - rho) * u_noise.
    Numeric values land in (lo, hi] of the column's domain hint.
    """
    config = config or GenConfig()
    unknown = set(config.tables) - {t.name for t in schema.tables}
    if unknown:
        raise ValueError(f"gen config names unknown tables {sorted(unknown)}")
    domains = {g.id: _group_domain_size(schema, g.id, config) for g in schema.groups}
    data: dict[str, dict[str, np.ndarray]] = {}
    for table in schema.tables:
        tg = config.tables.get(table.name, TableGen())
        rng = rng_for(seed, "table", table.name)
        n = table.cardinality
        cols: dict[str, np.ndarray] = {}
        ranks: dict[str, np.ndarray] = {}
        for gid, cname in schema.join_columns(table.name).items():
            size = domains[gid]
            if gid in tg.unique_keys:
                if n > size:
                    raise ValueError(f"{table.name}.{cname}: {n} unique keys exceed domain size {size}")
                r = np.sort(rng.permutation(size)[:n])
                rng.shuffle(r)
            else:
                r = rng.choice(size, size=n, p=zipf_probs(size, tg.key_skew.get(gid, config.default_skew)))
            ranks[gid] = r / max(size - 1, 1)
            keys = (r + tg.key_shift.get(gid, 0)) % size + 1
            col = table.column(cname)
            if col.is_numeric:
                lo = col.domain_hint[0] if col.domain_hint is not None else 0
                cols[cname] = keys + lo
            else:
                cols[cname] = np.array([f"k{k}" for k in keys], dtype=object)
        latent = rng.uniform(size=n)
        for col in schema.filterable_columns(table.name):
            rho = float(tg.correlation.get(col.name, config.default_correlation))
            if not 0.0 <= rho <= 1.0:
                raise ValueError(f"{table.name}.{col.name}: correlation {rho} outside [0, 1]")
            gid = tg.correlate_with.get(col.name)
            if gid is None:
                groups = schema.groups_of_table(table.name)
                gid = groups[0] if groups else None
            base = ranks[gid] if gid is not None else latent
            z = np.clip(rho * base + (1.0 - rho) * rng.uniform(size=n), 0.0, 1.0 - 1e-12)
            nf = float(tg.null_fraction.get(col.name, 0.0))
            if col.is_numeric:
                if nf:
                    raise ValueError(f"{table.name}.{col.name}: numeric columns cannot hold NULLs")
                lo, hi = col.domain_hint if col.domain_hint is not None else (0, 100)
                size = hi - lo
                if size < 1:
                    raise ValueError(f"{table.name}.{col.name}: domain size {size} < 1")
                cols[col.name] = lo + 1 + np.minimum((z * size).astype(np.int64), size - 1)
            else:
                if col.kind == "categorical":
                    k = int(col.domain_hint or 10)
                    vals = np.array([f"v{int(v)}" for v in np.minimum((z * k).astype(np.int64), k - 1)], dtype=object)
                else:
                    first = np.minimum((z * len(STRING_ALPHABET)).astype(np.int64), len(STRING_ALPHABET) - 1)
                    rest = rng.integers(0, len(STRING_ALPHABET), size=(n, STRING_LENGTH - 1))
                    vals = np.array(
                        [STRING_ALPHABET[f] + "".join(STRING_ALPHABET[c] for c in row) for f, row in zip(first, rest)],
                        dtype=object,
                    )
                if nf:
                    vals[rng.uniform(size=n) < nf] = None
                cols[col.name] = vals
        data[table.name] = cols
    return Dataset(schema, data, seed)


# ---------------------------------------------------------------------------
# exact evaluation
# ---------------------------------------------------------------------------


def like_match(value: str, pattern: str) -> bool:
    """SQL LIKE with '%' as the only wildcard."""
    if "%" not in pattern:
        return value == pattern
    segs = pattern.split("%")
    head, tail, middle = segs[0], segs[-1], segs[1:-1]
    if not value.startswith(head):
        return False
    pos = len(head)
    for seg in middle:
        if not seg:
            continue
        found = value.find(seg, pos)
        if found < 0:
            return False
        pos = found + len(seg)
    return len(value) - pos >= len(tail) and value.endswith(tail)


def _predicate_mask(dataset: Dataset, table: str, column: Column, op: str, value) -> np.ndarray:
    arr = dataset.columns[table][column.name]
    n = arr.size
    if column.is_numeric:
        if op == "eq":
            return arr == value
        if op == "lt":
            return arr < value
        if op == "le":
            return arr <= value
        if op == "gt":
            return arr > value
        if op == "ge":
            return arr >= value
        if op == "in":
            return np.isin(arr, np.asarray(value, dtype=np.int64))
        if op == "is_null":
            return np.zeros(n, dtype=bool)
        if op == "not_null":
            return np.ones(n, dtype=bool)
        raise QueryError(f"unsupported predicate {op!r} on numeric column {table}.{column.name}")
    uniq, codes = dataset.dictionary(table, column.name)
    if op == "is_null":
        return codes < 0
    if op == "not_null":
        return codes >= 0
    if op == "eq":
        hit = np.array([u == value for u in uniq], dtype=bool)
    elif op == "in":
        allowed = set(value)
        hit = np.array([u in allowed for u in uniq], dtype=bool)
    elif op == "like":
        hit = np.array([like_match(u, value) for u in uniq], dtype=bool)
    else:
        raise QueryError(f"unsupported predicate {op!r} on {column.kind} column {table}.{column.name}")
    lookup = np.concatenate([hit, [False]])  # code -1 reads the trailing False
    return lookup[codes]


def filter_mask(dataset: Dataset, aq: AliasQuery) -> np.ndarray:
    table = dataset.schema.table(aq.table)
    mask = np.ones(table.cardinality, dtype=bool)
    for col, op, value in aq.predicates:
        mask &= _predicate_mask(dataset, table.name, table.column(col), op, value)
    return mask


def execute_cardinality(dataset: Dataset, query: Query) -> int:
    """Exact SQL inner-join count: filter every alias, then pass key-count messages over the join tree."""
    schema = dataset.schema
    graph = query_graph(schema, query)
    masks = {a: filter_mask(dataset, query.alias_query(a)) for a in graph.aliases}
    bound = math.prod(max(schema.table(t).cardinality, 1) for t in graph.aliases.values())
    dtype = np.int64 if bound < 2**62 else object

    def codes(alias: str, gid: str) -> np.ndarray:
        return dataset.key_codes(graph.aliases[alias], schema.join_columns(graph.aliases[alias])[gid])

    def weights(alias: str, via) -> np.ndarray:
        w = masks[alias].astype(dtype)
        for gi in graph.instances_of(alias):
            if gi is via:
                continue
            msg = message(gi, alias)
            c = codes(alias, gi.group)
            w = w * np.where(c >= 0, msg[np.maximum(c, 0)], 0)
        return w

    def message(gi, parent: str) -> np.ndarray:
        size = len(dataset.key_domain(gi.group))
        msg = None
        for child in sorted(gi.aliases - {parent}):
            w = weights(child, gi)
            c = codes(child, gi.group)
            valid = c >= 0
            counts = np.zeros(size, dtype=dtype)
            np.add.at(counts, c[valid], w[valid])
            msg = counts if msg is None else msg * counts
        return msg

    root = min(graph.aliases)
    return int(weights(root, None).sum())


def join_key_frequencies(dataset: Dataset, query, group: str) -> FrequencyVector:
    """Key-value counts among rows of a single-alias query that pass its predicates."""
    if isinstance(query, Query):
        if len(query.table_refs) != 1:
            raise QueryError("join_key_frequencies needs a single-alias query")
        query = query.alias_query(next(iter(query.table_refs)))
    cols = dataset.schema.join_columns(query.table)
    if group not in cols:
        raise QueryError(f"table {query.table!r} is not a member of group {group!r}")
    mask = filter_mask(dataset, query)
    c = dataset.key_codes(query.table, cols[group])[mask]
    c = c[c >= 0]
    domain = dataset.key_domain(group)
    counts = np.bincount(c, minlength=len(domain))
    freq = {domain[i]: int(v) for i, v in enumerate(counts) if v}
    return FrequencyVector(freq, int(counts.sum()))


# ---------------------------------------------------------------------------
# oracle primitives: true cardinalities and true key distributions as "models"
# ---------------------------------------------------------------------------


class OraclePrimitives:
    """Stand-in for trained models that answers with exact per-table statistics.

    Sketches are full key distributions (dimension = group domain size).
    """

    def __init__(self, dataset: Dataset) -> None:
        self.dataset = dataset
        self.schema = dataset.schema
        self.calls: Counter = Counter()

    def table_size(self, table: str) -> int:
        return self.schema.table(table).cardinality

    def cardinalities(self, table: str, aqs) -> ad.Tensor:
        self.calls["cardest"] += len(aqs)
        return ad.Tensor(np.array([float(filter_mask(self.dataset, aq).sum()) for aq in aqs]))

    def sketches(self, table: str, aqs, groups) -> dict[str, ad.Tensor]:
        self.calls["lcs"] += len(aqs)
        out = {}
        for g in groups:
            domain = self.dataset.key_domain(g)
            out[g] = ad.Tensor(np.stack([join_key_frequencies(self.dataset, aq, g).distribution(domain) for aq in aqs]))
        return out


# ---------------------------------------------------------------------------
# line-delimited export / import
# ---------------------------------------------------------------------------


def export_dataset(dataset: Dataset, directory: str | Path) -> list[Path]:
    """One ``<table>.jsonl`` per table: a header object, then one JSON array per row."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for table in dataset.schema.tables:
        header = {
            "format": TABLE_FORMAT,
            "version": TABLE_VERSION,
            "table": table.name,
            "columns": [c.name for c in table.columns],
            "rows": table.cardinality,
            "seed": dataset.seed,
        }
        path = directory / f"{table.name}.jsonl"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(header, separators=(",", ":")) + "\n")
            for row in dataset.rows(table.name):
                fh.write(json.dumps([int(v) if isinstance(v, (int, np.integer)) else v for v in row], separators=(",", ":")) + "\n")
        paths.append(path)
    return paths


def import_dataset(schema: Schema, directory: str | Path) -> Dataset:
    directory = Path(directory)
    data: dict[str, dict[str, list]] = {}
    seed = 0
    for table in schema.tables:
        path = directory / f"{table.name}.jsonl"
        if not path.exists():
            raise DatasetFormatError(f"{path}: missing table file")
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines:
            raise DatasetFormatError(f"{path}:1: empty file")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}:1: bad header ({exc.msg})") from None
        names = [c.name for c in table.columns]
        if header.get("format") != TABLE_FORMAT or header.get("version") != TABLE_VERSION:
            raise DatasetFormatError(f"{path}:1: field 'format'/'version' not {TABLE_FORMAT} v{TABLE_VERSION}")
        if header.get("table") != table.name or header.get("columns") != names:
            raise DatasetFormatError(f"{path}:1: field 'columns' does not match the schema")
        seed = int(header.get("seed", 0))
        cols: dict[str, list] = {c: [] for c in names}
        for lineno, line in enumerate(lines[1:], start=2):
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc.msg}") from None
            if not isinstance(row, list) or len(row) != len(names):
                raise DatasetFormatError(f"{path}:{lineno}: expected {len(names)} values")
            for col, v in zip(table.columns, row):
                ok = isinstance(v, int) and not isinstance(v, bool) if col.is_numeric else (v is None or isinstance(v, str))
                if not ok:
                    raise DatasetFormatError(f"{path}:{lineno}: field {col.name!r} has invalid value {v!r}")
                cols[col.name].append(v)
        if len(lines) - 1 != table.cardinality:
            raise DatasetFormatError(f"{path}: {len(lines) - 1} rows, schema says {table.cardinality}")
        data[table.name] = {c: np.array(v, dtype=np.int64 if table.column(c).is_numeric else object) for c, v in cols.items()}
    return Dataset(schema, data, seed)
