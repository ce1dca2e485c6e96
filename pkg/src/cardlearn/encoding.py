"""Per-alias query featurization: box vertices for CDF models and set features for encoders.

Numeric predicates follow a half-open integer convention. Every constraint is
turned into an interval ``(lo, hi]`` on the raw integer scale:

    a <= v  -> (-inf, v]        a < v  -> (-inf, v-1]
    a >= v  -> (v-1, inf)       a > v  -> (v, inf)
    a == v  -> (v-1, v]         a IN S -> union of unit cells (s-1, s]

so that P(lo < X <= hi) = F(hi) - F(lo).
"""
from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .query import OPS, AliasQuery, LabeledQuery, QueryError
from .schema import Schema

HASH_DIM = 64
MAX_TWO_SIDED = 12
MAX_BOXES = 256


@dataclass(frozen=True)
class ColumnNormalizer:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"normalizer needs lo < hi, got ({self.lo}, {self.hi})")

    def normalize(self, v) -> np.ndarray | float:
        out = np.clip((np.asarray(v, dtype=np.float64) - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return float(out) if out.ndim == 0 else out


class NormalizerSet:
    """Fitted normalizers for every numeric column of a schema."""

    def __init__(self, items: Mapping[tuple[str, str], ColumnNormalizer]) -> None:
        self._items = dict(items)

    def get(self, table: str, column: str) -> ColumnNormalizer:
        try:
            return self._items[(table, column)]
        except KeyError:
            raise KeyError(f"no normalizer for {table}.{column}") from None

    def __contains__(self, key) -> bool:
        return key in self._items

    def __eq__(self, other) -> bool:
        return isinstance(other, NormalizerSet) and self._items == other._items

    def to_dict(self) -> dict:
        return {f"{t}.{c}": [n.lo, n.hi] for (t, c), n in sorted(self._items.items())}

    @classmethod
    def from_dict(cls, data: Mapping) -> "NormalizerSet":
        items = {}
        for key, (lo, hi) in data.items():
            t, c = key.split(".", 1)
            items[(t, c)] = ColumnNormalizer(float(lo), float(hi))
        return cls(items)


def fit_normalizers(schema: Schema, workload: Iterable) -> NormalizerSet:
    """(min, max) of literals per numeric column, widened by the schema's domain hint."""
    seen: dict[tuple[str, str], list[float]] = {}
    for item in workload:
        q = item.query if isinstance(item, LabeledQuery) else item
        for p in q.predicates:
            table = schema.table(q.table_refs[p.alias])
            if not table.column(p.column).is_numeric or p.value is None:
                continue
            vals = p.value if p.op == "in" else (p.value,)
            seen.setdefault((table.name, p.column), []).extend(float(v) for v in vals)
    items = {}
    for table in schema.tables:
        for col in table.columns:
            if not col.is_numeric:
                continue
            vals = list(seen.get((table.name, col.name), []))
            if col.domain_hint is not None:
                vals.extend(float(v) for v in col.domain_hint)
            if not vals:
                lo, hi = 0.0, 1.0
            else:
                lo, hi = min(vals), max(vals)
            if hi <= lo:
                hi = lo + 1.0
            items[(table.name, col.name)] = ColumnNormalizer(lo, hi)
    return NormalizerSet(items)


# ---------------------------------------------------------------------------
# box / vertex encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxEncoding:
    """One axis-aligned box: ``upper`` per column, ``lower`` only where ``two_sided``."""

    upper: np.ndarray
    lower: np.ndarray
    two_sided: np.ndarray

    def vertices(self) -> tuple[np.ndarray, np.ndarray]:
        """Corner points and inclusion-exclusion signs (-1 per lower coordinate)."""
        dims = np.flatnonzero(self.two_sided)
        if dims.size > MAX_TWO_SIDED:
            raise QueryError(f"{dims.size} two-sided dimensions exceed the cap of {MAX_TWO_SIDED}")
        m = dims.size
        pts = np.repeat(self.upper[None, :], 1 << m, axis=0)
        signs = np.ones(1 << m)
        for v in range(1 << m):
            for bit, dim in enumerate(dims):
                if v >> bit & 1:
                    pts[v, dim] = self.lower[dim]
                    signs[v] = -signs[v]
        return pts, signs


def _column_intervals(preds) -> list[tuple[float, float]]:
    lo, hi = -math.inf, math.inf
    cells = None
    for op, v in preds:
        if op == "le":
            hi = min(hi, v)
        elif op == "lt":
            hi = min(hi, v - 1)
        elif op == "ge":
            lo = max(lo, v - 1)
        elif op == "gt":
            lo = max(lo, v)
        elif op == "eq":
            lo, hi = max(lo, v - 1), min(hi, v)
        elif op == "in":
            s = set(v)
            cells = s if cells is None else cells & s
        elif op == "is_null":
            return []  # numeric columns hold no NULLs
        elif op == "not_null":
            continue
        else:
            raise QueryError(f"operator {op!r} unsupported on the numeric encoding path")
    if cells is None:
        return [(lo, hi)] if hi > lo else []
    out = []
    for c in sorted(cells):
        a, b = max(lo, c - 1), min(hi, c)
        if b > a:
            out.append((a, b))
    return out


def _norm_bounds(norm: ColumnNormalizer, a: float, b: float) -> tuple[float, float] | None:
    up = 1.0 if b == math.inf else norm.normalize(b)
    low = 0.0 if a == -math.inf else norm.normalize(a)
    if up <= low:
        return None
    return low, up


def encode_upper_bounds(aq: AliasQuery, columns: list[str], normalizers: NormalizerSet) -> list[BoxEncoding]:
    """Boxes whose signed vertex sums give the selectivity of ``aq``.

    ``columns`` fixes the attribute order. A single box results unless IN
    lists split a dimension; an empty list means the predicate set is empty.
    """
    index = {c: i for i, c in enumerate(columns)}
    per_col: dict[str, list] = {}
    for col, op, v in aq.predicates:
        if col not in index:
            raise QueryError(f"column {aq.table}.{col} is not on the numeric encoding path")
        per_col.setdefault(col, []).append((op, v))
    axes = []
    for c in columns:
        if c not in per_col:
            axes.append([(0.0, 1.0)])
            continue
        norm = normalizers.get(aq.table, c)
        ivals = [_norm_bounds(norm, a, b) for a, b in _column_intervals(per_col[c])]
        ivals = [iv for iv in ivals if iv is not None]
        if not ivals:
            return []
        axes.append(ivals)
    n_boxes = int(np.prod([len(a) for a in axes]))
    if n_boxes > MAX_BOXES:
        raise QueryError(f"predicate set expands into {n_boxes} boxes (cap {MAX_BOXES})")
    boxes = []
    for combo in itertools.product(*axes):
        low = np.array([lo for lo, _ in combo])
        up = np.array([hi for _, hi in combo])
        boxes.append(BoxEncoding(up, low, low > 0.0))
    return boxes


def encode_vertices(aq: AliasQuery, columns: list[str], normalizers: NormalizerSet) -> tuple[np.ndarray, np.ndarray]:
    """All signed vertices of all boxes, concatenated."""
    pts, signs = [], []
    for box in encode_upper_bounds(aq, columns, normalizers):
        p, s = box.vertices()
        pts.append(p)
        signs.append(s)
    if not pts:
        return np.zeros((0, len(columns))), np.zeros(0)
    return np.concatenate(pts), np.concatenate(signs)


# ---------------------------------------------------------------------------
# set encoding
# ---------------------------------------------------------------------------


def hash_slot(token: str, dim: int = HASH_DIM) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def like_tokens(pattern: str) -> list[str]:
    """Character trigrams of each literal segment plus an anchoring-shape token."""
    segments = pattern.split("%")
    shape = "".join("%" if s == "" else "s" for s in segments)
    tokens = [f"shape:{shape}"]
    for seg in segments:
        if not seg:
            continue
        if len(seg) < 3:
            tokens.append(f"seg:{seg}")
        else:
            tokens.extend(f"tri:{seg[i:i + 3]}" for i in range(len(seg) - 2))
    return tokens


class SetEncoder:
    """Fixed-width feature per predicate of one table.

    Layout: column one-hot | operator one-hot | numeric value | hash slots | no-filter flag.
    """

    def __init__(self, schema: Schema, table: str, normalizers: NormalizerSet, hash_dim: int = HASH_DIM) -> None:
        self.table = table
        self.columns = [c for c in schema.filterable_columns(table)]
        self.col_index = {c.name: i for i, c in enumerate(self.columns)}
        self.normalizers = normalizers
        self.hash_dim = hash_dim
        self._op_off = len(self.columns)
        self._val_off = self._op_off + len(OPS)
        self._hash_off = self._val_off + 1
        self._flag_off = self._hash_off + hash_dim
        self.width = self._flag_off + 1

    def _feature(self, col: str, op: str, value) -> np.ndarray:
        if col not in self.col_index:
            raise QueryError(f"column {self.table}.{col} not filterable")
        column = self.columns[self.col_index[col]]
        f = np.zeros(self.width)
        f[self.col_index[col]] = 1.0
        f[self._op_off + OPS.index(op)] = 1.0
        if op in ("is_null", "not_null"):
            return f
        if column.is_numeric:
            norm = self.normalizers.get(self.table, col)
            vals = value if op == "in" else (value,)
            f[self._val_off] = float(np.mean([norm.normalize(v) for v in vals]))
            if op == "in":
                for v in vals:
                    f[self._hash_off + hash_slot(f"{col}={v!r}", self.hash_dim)] += 1.0
            return f
        if op == "like":
            toks = like_tokens(value)
            for t in toks:
                f[self._hash_off + hash_slot(f"{col}~{t}", self.hash_dim)] += 1.0 / len(toks)
        else:
            vals = value if op == "in" else (value,)
            for v in vals:
                f[self._hash_off + hash_slot(f"{col}={v}", self.hash_dim)] += 1.0
            f[self._val_off] = len(vals) / 5.0
        return f

    def encode(self, aq: AliasQuery) -> np.ndarray:
        if not aq.predicates:
            f = np.zeros((1, self.width))
            f[0, self._flag_off] = 1.0
            return f
        return np.stack([self._feature(c, op, v) for c, op, v in aq.predicates])

    def encode_batch(self, aqs: list[AliasQuery]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked features, owning query index per row and mean-pooling weights."""
        feats, seg, weights = [], [], []
        for i, aq in enumerate(aqs):
            f = self.encode(aq)
            feats.append(f)
            seg.extend([i] * len(f))
            weights.extend([1.0 / len(f)] * len(f))
        return np.concatenate(feats), np.asarray(seg, dtype=np.int64), np.asarray(weights)


def encode_set(schema: Schema, aq: AliasQuery, normalizers: NormalizerSet, hash_dim: int = HASH_DIM) -> np.ndarray:
    return SetEncoder(schema, aq.table, normalizers, hash_dim).encode(aq)
