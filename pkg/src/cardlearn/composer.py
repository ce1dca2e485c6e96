"""Compose per-table cardinalities and sketches into join estimates.

For each join-key group taken in find_next_group order, the member sketches
are multiplied elementwise; every alias's cardinality enters the product once
and the group contributes the L1 norm of the combined sketch.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from . import autodiff as ad
from .query import AliasQuery, Query
from .schema import (
    JoinTemplate,
    QueryGraph,
    Schema,
    canonicalize,
    connected_subsets,
    find_next_group,
    query_graph,
)

SERVING_FLOOR = 1e-6


class Primitives(Protocol):
    def table_size(self, table: str) -> int: ...

    def cardinalities(self, table: str, aqs: Sequence[AliasQuery]) -> ad.Tensor: ...

    def sketches(self, table: str, aqs: Sequence[AliasQuery], groups: Sequence[str]) -> dict[str, ad.Tensor]: ...


def compose(
    graph: QueryGraph,
    cards: Mapping[str, ad.Tensor],
    sketches: Mapping[tuple[str, str], ad.Tensor],
    next_group: Callable = find_next_group,
) -> ad.Tensor:
    """Join estimate for every row of the batch; inputs are keyed by alias of ``graph``."""
    if len(graph.aliases) == 1:
        return cards[next(iter(graph.aliases))]
    est = None
    current: set[str] = set()
    remaining = list(graph.instances)
    while remaining:
        gi = next_group(frozenset(current), remaining)
        remaining.remove(gi)
        f = None
        for alias in sorted(gi.aliases):
            s = sketches[(alias, gi.group)]
            f = s if f is None else ad.mul(f, s)
            if alias not in current:
                est = cards[alias] if est is None else ad.mul(est, cards[alias])
                current.add(alias)
        est = ad.mul(est, ad.sum(f, axis=1))
    if current != set(graph.aliases):
        raise ValueError("group instances do not cover every alias")
    return est


@dataclass(frozen=True)
class PreparedQuery:
    """A query relabeled onto its canonical template."""

    query: Query
    template: JoinTemplate
    labels: dict[str, str]  # alias -> template label
    per_label: dict[str, AliasQuery]  # template label -> per-alias subquery


def prepare(schema: Schema, query: Query) -> PreparedQuery:
    graph = query_graph(schema, query)
    template, mapping = canonicalize(graph)
    return PreparedQuery(query, template, mapping, {mapping[a]: query.alias_query(a) for a in graph.aliases})


def _label_groups(graph: QueryGraph) -> dict[str, list[str]]:
    out: dict[str, set[str]] = {a: set() for a in graph.aliases}
    for gi in graph.instances:
        for a in gi.aliases:
            out[a].add(gi.group)
    return {a: sorted(g) for a, g in out.items()}


def primitive_outputs(prims: Primitives, graph: QueryGraph, per_alias: Mapping[str, Sequence[AliasQuery]]):
    """One cardinality and one sketch invocation per (alias, row), batched by table."""
    groups = _label_groups(graph)
    by_table: dict[str, list[str]] = {}
    for alias in sorted(graph.aliases):
        by_table.setdefault(graph.aliases[alias], []).append(alias)
    cards: dict[str, ad.Tensor] = {}
    sketches: dict[tuple[str, str], ad.Tensor] = {}
    for table, aliases in by_table.items():
        batch = [aq for a in aliases for aq in per_alias[a]]
        offsets = np.cumsum([0] + [len(per_alias[a]) for a in aliases])
        c = prims.cardinalities(table, batch)
        needed = sorted({g for a in aliases for g in groups[a]})
        sk = prims.sketches(table, batch, needed) if needed else {}
        for i, a in enumerate(aliases):
            idx = np.arange(offsets[i], offsets[i + 1])
            single = len(aliases) == 1
            cards[a] = c if single else ad.gather(c, idx)
            for g in groups[a]:
                sketches[(a, g)] = sk[g] if single else ad.gather(sk[g], idx)
    return cards, sketches


def _serving_cards(cards: Mapping[str, ad.Tensor]) -> dict[str, ad.Tensor]:
    # negative selectivity -> 1/|T|, i.e. one row
    out = {}
    for a, c in cards.items():
        neg = c.data < 0
        out[a] = ad.where(neg, ad.Tensor(np.ones(c.shape)), c) if neg.any() else c
    return out


def serving_floor(schema: Schema, tables: Iterable[str]) -> float:
    return SERVING_FLOOR * min(schema.table(t).cardinality for t in tables)


def compose_batch(
    prims: Primitives,
    schema: Schema,
    template: JoinTemplate,
    per_label: Mapping[str, Sequence[AliasQuery]],
    serving: bool = False,
) -> tuple[ad.Tensor, np.ndarray]:
    """Estimates for a batch of queries sharing ``template``; returns (estimates, negative flags).

    With ``serving`` the per-alias and final clamps apply; otherwise the raw,
    differentiable estimate is returned for the loss.
    """
    graph = template.graph()
    cards, sketches = primitive_outputs(prims, graph, per_label)
    negative = np.zeros(len(next(iter(per_label.values()))), dtype=bool)
    for c in cards.values():
        negative |= c.data < 0
    if not serving:
        est = compose(graph, cards, sketches)
        return est, negative | (est.data < 0)
    with ad.no_grad():
        raw = compose(graph, cards, sketches)
    est = compose(graph, _serving_cards(cards), sketches)
    floor = serving_floor(schema, graph.aliases.values())
    low = est.data < floor
    if low.any():
        est = ad.where(low, ad.Tensor(np.full(est.shape, floor)), est)
    return est, negative | (raw.data < 0)


class EstimateCache:
    """Session-scoped store of per-alias model outputs and subquery estimates."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.per_alias: dict[tuple, tuple[float, dict[str, np.ndarray]]] = {}
        self.subqueries: dict[tuple, float] = {}
        self.hits = 0
        self.misses = 0

    def get(self, store: dict, key):
        with self._lock:
            if key in store:
                self.hits += 1
                return store[key]
            self.misses += 1
            return None

    def put(self, store: dict, key, value) -> None:
        with self._lock:
            store.setdefault(key, value)


class Estimator:
    """Serving-side API over a set of primitives."""

    def __init__(self, schema: Schema, prims: Primitives) -> None:
        self.schema = schema
        self.prims = prims

    def estimate(self, query: Query) -> float:
        return float(self.estimate_many([query])[0][0])

    def estimate_raw(self, query: Query) -> float:
        p = prepare(self.schema, query)
        with ad.no_grad():
            est, _ = compose_batch(self.prims, self.schema, p.template, {k: [v] for k, v in p.per_label.items()})
        return float(est.data[0])

    def estimate_many(self, queries: Sequence[Query]) -> tuple[np.ndarray, np.ndarray]:
        """Served estimates and negative-estimate flags, batched by template."""
        out = np.zeros(len(queries))
        neg = np.zeros(len(queries), dtype=bool)
        buckets: dict[JoinTemplate, list[tuple[int, PreparedQuery]]] = {}
        for i, q in enumerate(queries):
            p = prepare(self.schema, q)
            buckets.setdefault(p.template, []).append((i, p))
        with ad.no_grad():
            for template in sorted(buckets, key=lambda t: t.key()):
                items = buckets[template]
                per_label = {lab: [p.per_label[lab] for _, p in items] for lab in template.labels}
                est, flags = compose_batch(self.prims, self.schema, template, per_label, serving=True)
                idx = [i for i, _ in items]
                out[idx] = est.data
                neg[idx] = flags
        return out, neg

    def estimate_all_subqueries(self, query: Query, cache: EstimateCache | None = None) -> list[tuple[frozenset, JoinTemplate, float]]:
        """Estimates of every connected subquery, smallest first.

        Each alias's primitives run once; later calls in the same session reuse
        the cached outputs and subquery estimates.
        """
        cache = cache if cache is not None else EstimateCache()
        graph = query_graph(self.schema, query)
        aqs = {a: query.alias_query(a) for a in graph.aliases}
        missing: dict[str, list[AliasQuery]] = {}
        for a in sorted(graph.aliases):
            if cache.get(cache.per_alias, aqs[a].signature()) is None:
                bucket = missing.setdefault(aqs[a].table, [])
                if aqs[a] not in bucket:
                    bucket.append(aqs[a])
        with ad.no_grad():
            for table, batch in missing.items():
                cards = self.prims.cardinalities(table, batch).data
                groups = self.schema.groups_of_table(table)
                sk = self.prims.sketches(table, batch, groups) if groups else {}
                for i, aq in enumerate(batch):
                    cache.put(cache.per_alias, aq.signature(), (float(cards[i]), {g: sk[g].data[i].copy() for g in groups}))
        results = []
        for subset in connected_subsets(graph):
            sub = graph.subgraph(subset)
            template, mapping = canonicalize(sub)
            key = (template.key(), tuple(sorted((mapping[a], aqs[a].predicates) for a in subset)))
            value = cache.get(cache.subqueries, key)
            if value is None:
                value = self._compose_cached(template, {mapping[a]: aqs[a] for a in subset}, cache)
                cache.put(cache.subqueries, key, value)
            results.append((subset, template, value))
        return results

    def _compose_cached(self, template: JoinTemplate, per_label: Mapping[str, AliasQuery], cache: EstimateCache) -> float:
        graph = template.graph()
        cards, sketches = {}, {}
        for lab, aq in per_label.items():
            c, sk = cache.per_alias[aq.signature()]
            cards[lab] = ad.Tensor(np.array([1.0 if c < 0 else c]))
            for g, v in sk.items():
                sketches[(lab, g)] = ad.Tensor(v[None, :])
        with ad.no_grad():
            est = float(compose(graph, cards, sketches).data[0])
        return max(est, serving_floor(self.schema, graph.aliases.values()))
