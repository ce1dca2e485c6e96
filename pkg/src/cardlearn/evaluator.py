"""Q-error metrics, split reports and the shift protocols."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .query import LabeledQuery
from .schema import JoinTemplate, Schema, canonical_template


def qerror(est: float, true: float) -> float:
    """max(est/true, true/est) with both sides clamped to >= 1."""
    e = max(float(est), 1.0)
    t = max(float(true), 1.0)
    return max(e / t, t / e)


def qerrors(est, true) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Q-errors plus the mask of non-positive estimates."""
    est = np.asarray(est, dtype=np.float64)
    true = np.maximum(np.asarray(true, dtype=np.float64), 1.0)
    negative = est <= 0
    e = np.maximum(est, 1.0)
    return np.maximum(e / true, true / e), negative


@dataclass
class SplitStats:
    count: int
    median: float
    p95: float
    mean: float
    negatives: int

    @classmethod
    def of(cls, q: np.ndarray, neg: np.ndarray) -> "SplitStats | None":
        if q.size == 0:
            return None
        return cls(int(q.size), float(np.median(q)), float(np.percentile(q, 95)), float(q.mean()), int(neg.sum()))


@dataclass
class QueryRecord:
    template: str
    seen: bool
    estimate: float
    cardinality: int
    qerror: float
    negative: bool


@dataclass
class EvalReport:
    splits: dict[str, SplitStats | None]
    per_template: dict[str, SplitStats]
    records: list[QueryRecord] = field(default_factory=list)

    @property
    def negative_count(self) -> int:
        return sum(r.negative for r in self.records)

    @property
    def negative_rate(self) -> float:
        return self.negative_count / max(len(self.records), 1)

    def to_dict(self, include_records: bool = False) -> dict:
        out = {
            "splits": {k: (asdict(v) if v else None) for k, v in self.splits.items()},
            "per_template": {k: asdict(v) for k, v in self.per_template.items()},
            "negative_count": self.negative_count,
            "negative_rate": self.negative_rate,
        }
        if include_records:
            out["records"] = [asdict(r) for r in self.records]
        return out

    def summary(self) -> str:
        lines = []
        for name, s in self.splits.items():
            if s is None:
                lines.append(f"{name:>7}: (no queries)")
            else:
                lines.append(
                    f"{name:>7}: n={s.count:5d} median={s.median:8.3f} p95={s.p95:10.3f} mean={s.mean:10.3f} negative={s.negatives}"
                )
        return "\n".join(lines)


def _estimate(estimator, queries) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(estimator, "estimate_many"):
        return estimator.estimate_many(queries)
    est = np.asarray(estimator(queries), dtype=np.float64)
    return est, est <= 0


def build_report(records: list[QueryRecord]) -> EvalReport:
    q = np.array([r.qerror for r in records])
    neg = np.array([r.negative for r in records], dtype=bool)
    seen = np.array([r.seen for r in records], dtype=bool)
    splits = {
        "all": SplitStats.of(q, neg),
        "seen": SplitStats.of(q[seen], neg[seen]),
        "unseen": SplitStats.of(q[~seen], neg[~seen]),
    }
    per_template = {}
    keys = sorted({r.template for r in records})
    for k in keys:
        m = np.array([r.template == k for r in records])
        per_template[k] = SplitStats.of(q[m], neg[m])
    return EvalReport(splits, per_template, records)


def evaluate_split(
    estimator,
    workload: Sequence[LabeledQuery],
    schema: Schema,
    train_templates: Iterable[JoinTemplate] = (),
) -> EvalReport:
    """Q-error report; a query is 'seen' iff its canonical template is among ``train_templates``.

    ``estimator`` is anything with ``estimate_many(queries) -> (estimates, negative flags)``
    or a plain callable returning estimates.
    """
    train = set(train_templates)
    queries = [lq.query for lq in workload]
    est, neg_flags = _estimate(estimator, queries)
    q, nonpos = qerrors(est, [lq.cardinality for lq in workload])
    records = []
    for i, lq in enumerate(workload):
        t = canonical_template(schema, lq.query)
        records.append(QueryRecord(t.key(), t in train, float(est[i]), int(lq.cardinality), float(q[i]), bool(neg_flags[i] or nonpos[i])))
    return build_report(records)


def shift_suite(
    dataset,
    train_spec,
    test_spec,
    train_fn: Callable,
    seed: int = 0,
    kind: str = "granularity",
) -> tuple[EvalReport, EvalReport]:
    """Train on ``train_spec`` queries, then report on in-distribution and shifted test workloads.

    ``train_fn(workload) -> estimator`` builds and trains the models.
    For ``kind="granularity"`` both test workloads share one seed, so equal
    specs give identical reports. ``kind="cardinality"`` splits one pool into
    label terciles: train and in-distribution test from the lower tercile,
    shifted test from the upper one.
    """
    from .workload import cardinality_shift_split, generate_workload

    schema = dataset.schema
    if kind == "granularity":
        train = generate_workload(dataset, train_spec, seed)
        in_dist = generate_workload(dataset, train_spec, seed + 1)
        shifted = generate_workload(dataset, test_spec, seed + 1)
    elif kind == "cardinality":
        pool = generate_workload(dataset, train_spec, seed)
        low, shifted = cardinality_shift_split(pool, schema)
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(low))
        cut = int(0.8 * len(low))
        train = [low[i] for i in sorted(perm[:cut])]
        in_dist = [low[i] for i in sorted(perm[cut:])]
    else:
        raise ValueError(f"unknown shift kind {kind!r}")
    estimator = train_fn(train)
    templates = {canonical_template(schema, lq.query) for lq in train}
    return (
        evaluate_split(estimator, in_dist, schema, templates),
        evaluate_split(estimator, shifted, schema, templates),
    )
