"""Labeled workload synthesis with controlled coverage, imbalance and shift."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .workload_io import WORKLOAD_FORMAT, WORKLOAD_VERSION, WorkloadFormatError, read_workload, write_workload  # noqa: F401
from .oracle import STRING_ALPHABET, Dataset, execute_cardinality
from .query import LabeledQuery, Predicate, QueryError
from .schema import JoinTemplate, Schema, all_join_templates, canonical_template, template_query
from .seeding import rng_for

EXCLUDED_BAND = (0.45, 0.55)


@dataclass(frozen=True)
class GranularityLaw:
    """Distribution of normalized range width g in (0, 1]."""

    kind: str = "uniform"  # uniform | constant | uniform_excluding
    value: float = 0.5
    band: tuple[float, float] = EXCLUDED_BAND

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "constant", "uniform_excluding"):
            raise ValueError(f"unknown granularity law {self.kind!r}")
        if self.kind == "constant" and not 0.0 < self.value <= 1.0:
            raise ValueError("granularity must lie in (0, 1]")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "constant":
            return self.value
        while True:
            g = 1.0 - rng.uniform()  # (0, 1]
            if self.kind == "uniform" or not self.band[0] <= g <= self.band[1]:
                return g

    def admits(self, g: float) -> bool:
        return self.kind != "uniform_excluding" or not self.band[0] <= g <= self.band[1]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "band": list(self.band)}

    @classmethod
    def from_dict(cls, data: dict) -> "GranularityLaw":
        return cls(data.get("kind", "uniform"), float(data.get("value", 0.5)), tuple(data.get("band", EXCLUDED_BAND)))


@dataclass(frozen=True)
class WorkloadSpec:
    templates: tuple[JoinTemplate, ...]
    queries_per_template: int = 100
    literal_law: str = "uniform"  # uniform | zipf
    zipf_s: float = 1.1
    granularity: GranularityLaw = field(default_factory=GranularityLaw)
    predicate_prob: float = 0.8
    eq_prob: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "templates", tuple(self.templates))
        if self.queries_per_template < 1:
            raise ValueError("queries_per_template must be >= 1")
        if self.literal_law not in ("uniform", "zipf"):
            raise ValueError(f"unknown literal law {self.literal_law!r}")
        if not 0.0 <= self.predicate_prob <= 1.0 or not 0.0 <= self.eq_prob <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "templates": [t.to_dict() for t in self.templates],
            "queries_per_template": self.queries_per_template,
            "literal_law": self.literal_law,
            "zipf_s": self.zipf_s,
            "granularity": self.granularity.to_dict(),
            "predicate_prob": self.predicate_prob,
            "eq_prob": self.eq_prob,
        }


def _pick(rng: np.random.Generator, n: int, law: str, s: float) -> int:
    if law == "uniform" or n == 1:
        return int(rng.integers(0, n))
    p = np.arange(1, n + 1, dtype=np.float64) ** (-s)
    return int(rng.choice(n, p=p / p.sum()))


def _numeric_predicates(alias, col, spec: WorkloadSpec, rng) -> list[Predicate]:
    if col.domain_hint is None:
        raise QueryError(f"numeric column {col.name!r} needs a domain_hint to draw literals")
    lo, hi = col.domain_hint
    width_dom = hi - lo
    if width_dom < 1:
        raise QueryError(f"column {col.name!r}: empty domain")
    if spec.eq_prob and rng.uniform() < spec.eq_prob:
        return [Predicate(alias, col.name, "eq", lo + 1 + _pick(rng, width_dom, spec.literal_law, spec.zipf_s))]
    while True:
        g = spec.granularity.sample(rng)
        w = int(round(g * width_dom))
        if w >= 1 and spec.granularity.admits(w / width_dom):
            break
        if spec.granularity.kind == "constant":
            w = max(w, 1)
            break
    start = lo + _pick(rng, width_dom - w + 1, spec.literal_law, spec.zipf_s)
    # half-open (start, start + w]
    return [Predicate(alias, col.name, "gt", start), Predicate(alias, col.name, "le", start + w)]


def _categorical_predicate(alias, col, spec, rng) -> Predicate:
    n = int(col.domain_hint or 10)
    r = rng.uniform()
    if r < 0.6:
        return Predicate(alias, col.name, "eq", f"v{_pick(rng, n, spec.literal_law, spec.zipf_s)}")
    if r < 0.95:
        k = int(rng.integers(1, min(5, n) + 1))
        return Predicate(alias, col.name, "in", [f"v{int(v)}" for v in rng.choice(n, size=k, replace=False)])
    return Predicate(alias, col.name, "is_null" if rng.uniform() < 0.5 else "not_null")


def _string_predicate(alias, col, rng) -> Predicate:
    a = STRING_ALPHABET
    form = rng.integers(0, 3)
    if form == 0:
        lit = "".join(a[i] for i in rng.integers(0, len(a), size=int(rng.integers(1, 3))))
        return Predicate(alias, col.name, "like", lit + "%")
    if form == 1:
        lit = "".join(a[i] for i in rng.integers(0, len(a), size=2))
        return Predicate(alias, col.name, "like", "%" + lit + "%")
    lit = a[int(rng.integers(0, len(a)))]
    return Predicate(alias, col.name, "like", "%" + lit)


def sample_query(schema: Schema, template: JoinTemplate, spec: WorkloadSpec, rng: np.random.Generator):
    preds = []
    for label in template.labels:
        table = schema.table(template.graph().aliases[label])
        for col in schema.filterable_columns(table.name):
            if rng.uniform() >= spec.predicate_prob:
                continue
            if col.is_numeric:
                preds.extend(_numeric_predicates(label, col, spec, rng))
            elif col.kind == "categorical":
                preds.append(_categorical_predicate(label, col, spec, rng))
            else:
                preds.append(_string_predicate(label, col, rng))
    return template_query(schema, template, preds)


def generate_workload(dataset: Dataset, spec: WorkloadSpec, seed: int = 0) -> list[LabeledQuery]:
    """Seeded queries per template, each labeled by the oracle. Literals come from domain hints, never rows."""
    schema = dataset.schema
    out = []
    for template in spec.templates:
        graph = template.graph()
        if not graph.is_connected() or not graph.is_acyclic():
            raise QueryError(f"template {template.key()} is not a connected acyclic join graph")
        for t in graph.aliases.values():
            schema.table(t)
        rng = rng_for(seed, "workload", template.key())
        for _ in range(spec.queries_per_template):
            q = sample_query(schema, template, spec, rng)
            out.append(LabeledQuery(q, execute_cardinality(dataset, q)))
    return out


# ---------------------------------------------------------------------------
# coverage and imbalance
# ---------------------------------------------------------------------------


def apply_tcr_split(
    all_templates: Sequence[JoinTemplate],
    target_tcr: float,
    seed: int = 0,
    always_include: Iterable[JoinTemplate] = (),
) -> tuple[list[JoinTemplate], list[JoinTemplate]]:
    """Random train/unseen partition with |train| = round(tcr * |all|) (halves round up)."""
    if not 0.0 < target_tcr <= 1.0:
        raise ValueError("target_tcr must lie in (0, 1]")
    pool = sorted(set(all_templates), key=lambda t: t.key())
    n_train = int(math.floor(target_tcr * len(pool) + 0.5))
    if n_train < 1:
        raise ValueError(f"tcr {target_tcr} over {len(pool)} templates leaves no training template")
    forced = [t for t in pool if t in set(always_include)]
    if len(forced) > n_train:
        raise ValueError("more forced templates than the training budget")
    rest = [t for t in pool if t not in set(forced)]
    rng = rng_for(seed, "tcr")
    perm = rng.permutation(len(rest))
    chosen = set(forced) | {rest[i] for i in perm[: n_train - len(forced)]}
    train = [t for t in pool if t in chosen]
    unseen = [t for t in pool if t not in chosen]
    return train, unseen


def apply_cir_imbalance(counts: Sequence[int], target_cir: float, decay: float = 1.5) -> list[int]:
    """Decay successive template counts from the largest until n_l / n_s >= target.

    Templates after the threshold keep n_s (never more than they had). When the
    templates run out first, the last one keeps decaying.
    """
    if target_cir < 1:
        raise ValueError("target_cir must be >= 1")
    if decay <= 1:
        raise ValueError("decay must exceed 1")
    counts = [int(c) for c in counts]
    if not counts:
        return []
    if any(a < b for a, b in zip(counts, counts[1:])):
        raise ValueError("counts must be sorted in descending order")
    n_l = counts[0]
    out = [n_l]
    n_s = n_l
    i = 0
    while n_l / n_s < target_cir:
        i += 1
        n_s = int(math.floor(n_l / decay**i))
        if n_s < 1:
            raise ValueError(f"target cir {target_cir} unreachable from n_l = {n_l}")
        if len(out) < len(counts):
            out.append(min(n_s, counts[len(out)]))
            n_s = out[-1]
        elif len(counts) == 1:
            raise ValueError("a single template cannot be imbalanced")
        else:
            out[-1] = min(n_s, counts[-1])
            n_s = out[-1]
    while len(out) < len(counts):
        out.append(min(n_s, counts[len(out)]))
    return out


def subsample_to_counts(workload: Sequence[LabeledQuery], schema: Schema, counts: dict[JoinTemplate, int]) -> list[LabeledQuery]:
    """Keep the first ``counts[t]`` queries of every template (workload order preserved)."""
    kept: Counter = Counter()
    out = []
    for lq in workload:
        t = canonical_template(schema, lq.query)
        if kept[t] < counts.get(t, 0):
            kept[t] += 1
            out.append(lq)
    return out


def imbalance_workload(workload: Sequence[LabeledQuery], schema: Schema, target_cir: float, decay: float = 1.5) -> list[LabeledQuery]:
    per = Counter(canonical_template(schema, lq.query) for lq in workload)
    order = sorted(per, key=lambda t: (-per[t], t.key()))
    new = apply_cir_imbalance([per[t] for t in order], target_cir, decay)
    return subsample_to_counts(workload, schema, dict(zip(order, new)))


def tcr_cir_from_counts(counts: dict, n_universe: int) -> tuple[float, float]:
    observed = [c for c in counts.values() if c > 0]
    if not observed or n_universe < 1:
        raise ValueError("need at least one observed template")
    return len(observed) / n_universe, max(observed) / min(observed)


def measure_tcr_cir(workload: Sequence[LabeledQuery], schema: Schema, universe: Sequence[JoinTemplate] | None = None) -> tuple[float, float]:
    """TCR over the multi-table template universe; CIR over every observed template."""
    if not workload:
        raise ValueError("empty workload")
    universe = set(all_join_templates(schema) if universe is None else universe)
    per = Counter(canonical_template(schema, lq.query) for lq in workload)
    covered = sum(1 for t in per if t in universe)
    return covered / len(universe), max(per.values()) / min(per.values())


# ---------------------------------------------------------------------------
# shifts
# ---------------------------------------------------------------------------


def apply_granularity_shift(spec: WorkloadSpec, schema: Schema | None = None) -> tuple[WorkloadSpec, WorkloadSpec]:
    """Train widths avoid the band around 0.5; test widths are exactly 0.5."""
    if schema is not None:
        has_numeric = any(
            c.is_numeric for t in spec.templates for lab in t.labels for c in schema.filterable_columns(lab.split("#")[0])
        )
        if not has_numeric:
            raise ValueError("granularity shift needs a numeric range column")
    train = replace(spec, granularity=GranularityLaw("uniform_excluding", band=EXCLUDED_BAND))
    test = replace(spec, granularity=GranularityLaw("constant", 0.5))
    return train, test


def cardinality_shift_split(workload: Sequence[LabeledQuery], schema: Schema) -> tuple[list[LabeledQuery], list[LabeledQuery]]:
    """Per template: the lower label tercile becomes train, the upper tercile test."""
    buckets: dict[JoinTemplate, list[LabeledQuery]] = {}
    for lq in workload:
        buckets.setdefault(canonical_template(schema, lq.query), []).append(lq)
    low, high = [], []
    for t in sorted(buckets, key=lambda t: t.key()):
        items = buckets[t]
        order = sorted(range(len(items)), key=lambda i: (items[i].cardinality, i))
        k = len(items) // 3
        low.extend(items[i] for i in sorted(order[:k]))
        high.extend(items[i] for i in sorted(order[len(items) - k :]))
    return low, high
