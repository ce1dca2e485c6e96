"""Relational metadata, join-key groups and join-template canonicalization."""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .query import GroupInstance, Query, QueryError

KINDS = ("numeric-integer", "categorical", "string")


class SchemaError(ValueError):
    """Invalid schema document or schema object."""


class DisconnectedQueryError(QueryError):
    """No remaining join-key group touches the tables joined so far."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    domain_hint: tuple[int, int] | int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        hint = self.domain_hint
        if hint is None:
            return
        if self.kind == "numeric-integer":
            lo, hi = hint
            if lo > hi:
                raise SchemaError(f"column {self.name!r}: domain_hint min {lo} > max {hi}")
            object.__setattr__(self, "domain_hint", (int(lo), int(hi)))
        elif self.kind == "categorical":
            if int(hint) < 1:
                raise SchemaError(f"column {self.name!r}: distinct count must be >= 1")
            object.__setattr__(self, "domain_hint", int(hint))
        else:
            raise SchemaError(f"column {self.name!r}: string columns take no domain_hint")

    @property
    def is_numeric(self) -> bool:
        return self.kind == "numeric-integer"


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[Column, ...]
    cardinality: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        if self.cardinality < 0:
            raise SchemaError(f"table {self.name!r}: cardinality must be >= 0")
        if "#" in self.name or "." in self.name:
            raise SchemaError(f"table {self.name!r}: names may not contain '#' or '.'")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"table {self.name!r}: duplicate column names")

    def column(self, name: str) -> Column:
        for col in self.columns:
            if col.name == name:
                return col
        raise SchemaError(f"table {self.name!r} has no column {name!r}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)


@dataclass(frozen=True)
class JoinKeyGroup:
    id: str
    members: frozenset[tuple[str, str]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", frozenset(tuple(m) for m in self.members))
        if len(self.members) < 2:
            raise SchemaError(f"group {self.id!r} needs at least two members")

    @property
    def tables(self) -> list[str]:
        return sorted({t for t, _ in self.members})


@dataclass(frozen=True)
class Schema:
    tables: tuple[Table, ...]
    groups: tuple[JoinKeyGroup, ...] = ()
    _col_group: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tables", tuple(self.tables))
        object.__setattr__(self, "groups", tuple(sorted(self.groups, key=lambda g: g.id)))
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate table names")
        if len({g.id for g in self.groups}) != len(self.groups):
            raise SchemaError("duplicate group ids")
        by_name = {t.name: t for t in self.tables}
        col_group: dict[tuple[str, str], str] = {}
        for g in self.groups:
            seen_tables = set()
            for table, column in sorted(g.members):
                if table not in by_name:
                    raise SchemaError(f"group {g.id!r}: unknown table {table!r}")
                col = by_name[table].column(column)
                if col.kind not in ("numeric-integer", "categorical"):
                    raise SchemaError(f"group {g.id!r}: {table}.{column} must be numeric-integer or categorical")
                if (table, column) in col_group:
                    raise SchemaError(f"{table}.{column} belongs to groups {col_group[(table, column)]!r} and {g.id!r}")
                if table in seen_tables:
                    raise SchemaError(f"group {g.id!r}: table {table!r} contributes more than one column")
                seen_tables.add(table)
                col_group[(table, column)] = g.id
        object.__setattr__(self, "_col_group", col_group)

    # lookups ---------------------------------------------------------------
    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise SchemaError(f"unknown table {name!r}")

    def group(self, gid: str) -> JoinKeyGroup:
        for g in self.groups:
            if g.id == gid:
                return g
        raise SchemaError(f"unknown group {gid!r}")

    def group_of(self, table: str, column: str) -> str | None:
        return self._col_group.get((table, column))

    def join_columns(self, table: str) -> dict[str, str]:
        """Group id -> column name for every group the table belongs to."""
        return {gid: col for (t, col), gid in sorted(self._col_group.items()) if t == table}

    def groups_of_table(self, table: str) -> list[str]:
        return sorted(self.join_columns(table))

    def filterable_columns(self, table: str) -> list[Column]:
        return [c for c in self.table(table).columns if (table, c.name) not in self._col_group]

    # persistence -------------------------------------------------------------
    def to_dict(self) -> dict:
        tables = []
        for t in self.tables:
            cols = []
            for c in t.columns:
                entry: dict = {"name": c.name, "kind": c.kind}
                if c.domain_hint is not None:
                    if c.is_numeric:
                        entry["domain_hint"] = {"min": c.domain_hint[0], "max": c.domain_hint[1]}
                    else:
                        entry["domain_hint"] = {"distinct": c.domain_hint}
                cols.append(entry)
            tables.append({"name": t.name, "cardinality": t.cardinality, "columns": cols})
        groups = [{"id": g.id, "members": [list(m) for m in sorted(g.members)]} for g in self.groups]
        return {"tables": tables, "groups": groups}

    @classmethod
    def from_dict(cls, data: Mapping, source: str = "<schema>") -> "Schema":
        def fail(where: str, msg: str) -> None:
            raise SchemaError(f"{source}: {where}: {msg}")

        def check_keys(obj, allowed: set[str], required: set[str], where: str) -> None:
            if not isinstance(obj, Mapping):
                fail(where, "expected an object")
            unknown = set(obj) - allowed
            if unknown:
                fail(where, f"unknown field(s) {sorted(unknown)}")
            missing = required - set(obj)
            if missing:
                fail(where, f"missing field(s) {sorted(missing)}")

        check_keys(data, {"tables", "groups"}, {"tables"}, "root")
        tables = []
        for ti, tdata in enumerate(data["tables"]):
            where = f"tables[{ti}]"
            check_keys(tdata, {"name", "cardinality", "columns"}, {"name", "cardinality", "columns"}, where)
            cols = []
            for ci, cdata in enumerate(tdata["columns"]):
                cwhere = f"{where}.columns[{ci}]"
                check_keys(cdata, {"name", "kind", "domain_hint"}, {"name", "kind"}, cwhere)
                hint = cdata.get("domain_hint")
                if hint is not None:
                    if cdata["kind"] == "numeric-integer":
                        check_keys(hint, {"min", "max"}, {"min", "max"}, cwhere + ".domain_hint")
                        hint = (hint["min"], hint["max"])
                    else:
                        check_keys(hint, {"distinct"}, {"distinct"}, cwhere + ".domain_hint")
                        hint = hint["distinct"]
                try:
                    cols.append(Column(cdata["name"], cdata["kind"], hint))
                except SchemaError as exc:
                    fail(cwhere, str(exc))
            card = tdata["cardinality"]
            if not isinstance(card, int) or isinstance(card, bool):
                fail(where + ".cardinality", "must be an integer")
            try:
                tables.append(Table(tdata["name"], tuple(cols), card))
            except SchemaError as exc:
                fail(where, str(exc))
        groups = []
        for gi, gdata in enumerate(data.get("groups", [])):
            where = f"groups[{gi}]"
            check_keys(gdata, {"id", "members"}, {"id", "members"}, where)
            try:
                groups.append(JoinKeyGroup(gdata["id"], frozenset(tuple(m) for m in gdata["members"])))
            except (SchemaError, TypeError) as exc:
                fail(where, str(exc))
        try:
            return cls(tuple(tables), tuple(groups))
        except SchemaError as exc:
            raise SchemaError(f"{source}: {exc}") from None

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_schema(path: str | Path) -> Schema:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return Schema.from_dict(data, source=str(path))


def save_schema(schema: Schema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# query graphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QueryGraph:
    """Alias -> table map plus the group instances joining the aliases."""

    aliases: dict[str, str]
    instances: tuple[GroupInstance, ...]

    def subgraph(self, keep: Iterable[str]) -> "QueryGraph":
        keep = frozenset(keep)
        inst = []
        for gi in self.instances:
            members = gi.aliases & keep
            if len(members) >= 2:
                inst.append(GroupInstance(gi.group, members))
        return QueryGraph({a: t for a, t in self.aliases.items() if a in keep}, tuple(sorted(inst, key=lambda g: g.key)))

    def is_connected(self) -> bool:
        if not self.aliases:
            return False
        adj = {a: set() for a in self.aliases}
        for gi in self.instances:
            for a in gi.aliases:
                adj[a] |= gi.aliases - {a}
        start = min(self.aliases)
        seen, stack = {start}, [start]
        while stack:
            for b in adj[stack.pop()]:
                if b not in seen:
                    seen.add(b)
                    stack.append(b)
        return len(seen) == len(self.aliases)

    def is_acyclic(self) -> bool:
        # alias/instance incidence graph must be a forest
        parent = {}

        def find(x):
            while parent.setdefault(x, x) != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, gi in enumerate(self.instances):
            for a in gi.aliases:
                ra, rb = find(("a", a)), find(("g", i))
                if ra == rb:
                    return False
                parent[ra] = rb
        return True

    def instances_of(self, alias: str) -> list[GroupInstance]:
        return [gi for gi in self.instances if alias in gi.aliases]


def _instances_from_conditions(schema: Schema, aliases: Mapping[str, str], conditions) -> tuple[GroupInstance, ...]:
    parent: dict[tuple[str, str], tuple[str, str]] = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for (la, lc), (ra, rc) in conditions:
        for alias in (la, ra):
            if alias not in aliases:
                raise QueryError(f"join condition references unknown alias {alias!r}")
        lt, rt = schema.table(aliases[la]), schema.table(aliases[ra])
        if not lt.has_column(lc) or not rt.has_column(rc):
            raise QueryError(f"join condition {la}.{lc} = {ra}.{rc}: unknown column")
        lg, rg = schema.group_of(lt.name, lc), schema.group_of(rt.name, rc)
        if lg is None or lg != rg:
            raise QueryError(f"join condition {la}.{lc} = {ra}.{rc}: columns are not co-members of one group")
        if la == ra:
            raise QueryError(f"join condition {la}.{lc} = {ra}.{rc} joins an alias with itself")
        a, b = find((lg, la)), find((lg, ra))
        if a != b:
            parent[a] = b
    classes: dict[tuple[str, str], set[str]] = {}
    for node in list(parent):
        classes.setdefault(find(node), set()).add(node[1])
    inst = [GroupInstance(root[0], frozenset(members)) for root, members in classes.items() if len(members) >= 2]
    return tuple(sorted(inst, key=lambda g: g.key))


def query_graph(schema: Schema, query: Query) -> QueryGraph:
    """Validate ``query`` against ``schema`` and return its join structure."""
    if not query.table_refs:
        raise QueryError("query references no tables")
    for alias, table in query.table_refs.items():
        if "." in alias:
            raise QueryError(f"alias {alias!r} may not contain '.'")
        schema.table(table)
    for p in query.predicates:
        if p.alias not in query.table_refs:
            raise QueryError(f"predicate references unknown alias {p.alias!r}")
        table = schema.table(query.table_refs[p.alias])
        if not table.has_column(p.column):
            raise QueryError(f"unknown column {table.name}.{p.column}")
        if schema.group_of(table.name, p.column) is not None:
            raise QueryError(f"predicate on join key {table.name}.{p.column} is not supported")
        _check_literal(table.column(p.column), p)
    graph = QueryGraph(dict(query.table_refs), _instances_from_conditions(schema, query.table_refs, query.join_conditions))
    if not graph.is_connected():
        raise DisconnectedQueryError("join conditions do not connect all aliases")
    if not graph.is_acyclic():
        raise QueryError("cyclic join graphs are not supported")
    return graph


def _check_literal(column: Column, p) -> None:
    if p.op in ("is_null", "not_null"):
        return
    values = p.value if p.op == "in" else (p.value,)
    for v in values:
        if column.is_numeric:
            if p.op == "like":
                raise QueryError(f"LIKE on numeric column {column.name!r}")
            if not isinstance(v, int) or isinstance(v, bool):
                raise QueryError(f"numeric column {column.name!r} needs integer literals, got {v!r}")
        elif not isinstance(v, str):
            raise QueryError(f"column {column.name!r} needs string literals, got {v!r}")
    if column.kind == "string" and p.op not in ("eq", "in", "like"):
        raise QueryError(f"operator {p.op!r} unsupported on string column {column.name!r}")
    if column.kind == "categorical" and p.op not in ("eq", "in", "like"):
        raise QueryError(f"operator {p.op!r} unsupported on categorical column {column.name!r}")


def graph_query(schema: Schema, graph: QueryGraph, predicates=()) -> Query:
    """Materialize a query from a graph: each group instance becomes a chain of equalities."""
    conds = []
    for gi in graph.instances:
        members = sorted(gi.aliases)
        cols = {a: schema.join_columns(graph.aliases[a])[gi.group] for a in members}
        for a, b in zip(members, members[1:]):
            conds.append(((a, cols[a]), (b, cols[b])))
    keep = set(graph.aliases)
    return Query(dict(graph.aliases), tuple(conds), tuple(p for p in predicates if p.alias in keep))


def subquery(schema: Schema, query: Query, aliases: Iterable[str]) -> Query:
    graph = query_graph(schema, query).subgraph(aliases)
    return graph_query(schema, graph, query.predicates)


def connected_subsets(graph: QueryGraph) -> list[frozenset[str]]:
    """Every alias subset inducing a connected subgraph, smallest first."""
    names = sorted(graph.aliases)
    out = []
    for size in range(1, len(names) + 1):
        for combo in itertools.combinations(names, size):
            if size == 1 or graph.subgraph(combo).is_connected():
                out.append(frozenset(combo))
    return out


# ---------------------------------------------------------------------------
# join templates
# ---------------------------------------------------------------------------


def _label(table: str, index: int) -> str:
    return table if index == 0 else f"{table}#{index + 1}"


def label_table(label: str) -> str:
    return label.split("#", 1)[0]


@dataclass(frozen=True, order=True)
class JoinTemplate:
    """Canonical join graph: table multiset plus chain edges per group instance."""

    node_multiset: tuple[str, ...]
    edges: tuple[tuple[str, str, str], ...] = ()

    @property
    def labels(self) -> list[str]:
        out, counts = [], {}
        for t in self.node_multiset:
            out.append(_label(t, counts.get(t, 0)))
            counts[t] = counts.get(t, 0) + 1
        return out

    @property
    def size(self) -> int:
        return len(self.node_multiset)

    def graph(self) -> QueryGraph:
        members: dict[tuple[str, str], set[str]] = {}
        parent: dict[tuple[str, str], tuple[str, str]] = {}

        def find(x):
            while parent.setdefault(x, x) != x:
                x = parent[x]
            return x

        for a, b, g in self.edges:
            ra, rb = find((g, a)), find((g, b))
            if ra != rb:
                parent[ra] = rb
        for node in list(parent):
            members.setdefault(find(node), set()).add(node[1])
        inst = tuple(sorted((GroupInstance(r[0], frozenset(m)) for r, m in members.items()), key=lambda g: g.key))
        return QueryGraph({lab: label_table(lab) for lab in self.labels}, inst)

    def key(self) -> str:
        nodes = ",".join(self.labels)
        parts = []
        for gi in self.graph().instances:
            parts.append(f"{gi.group}:" + "-".join(sorted(gi.aliases)))
        return nodes + ("|" + ";".join(parts) if parts else "")

    def __str__(self) -> str:
        return self.key()

    def to_dict(self) -> dict:
        return {"tables": list(self.node_multiset), "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "JoinTemplate":
        return cls(tuple(data["tables"]), tuple(sorted(tuple(e) for e in data.get("edges", []))))


def _encode(graph: QueryGraph, order: Mapping[str, str]) -> tuple:
    return tuple(sorted((gi.group, tuple(sorted(order[a] for a in gi.aliases))) for gi in graph.instances))


def canonicalize(graph: QueryGraph) -> tuple[JoinTemplate, dict[str, str]]:
    """Return the canonical template of ``graph`` and the alias -> label mapping.

    Labels are assigned per table in every possible alias order; the order whose
    encoded edge structure is lexicographically smallest wins.
    """
    by_table: dict[str, list[str]] = {}
    for alias, table in sorted(graph.aliases.items()):
        by_table.setdefault(table, []).append(alias)
    tables = sorted(by_table)
    best = None
    for perms in itertools.product(*(itertools.permutations(by_table[t]) for t in tables)):
        mapping = {}
        for t, perm in zip(tables, perms):
            for i, alias in enumerate(perm):
                mapping[alias] = _label(t, i)
        enc = _encode(graph, mapping)
        if best is None or enc < best[0]:
            best = (enc, mapping)
    enc, mapping = best
    nodes = tuple(sorted(graph.aliases.values()))
    edges = []
    for group, labels in enc:
        for a, b in zip(labels, labels[1:]):
            edges.append((a, b, group))
    return JoinTemplate(nodes, tuple(sorted(edges))), mapping


def canonical_template(schema: Schema, query: Query) -> JoinTemplate:
    return canonicalize(query_graph(schema, query))[0]


def enumerate_subquery_templates(template: JoinTemplate) -> list[JoinTemplate]:
    graph = template.graph()
    seen: dict[JoinTemplate, None] = {}
    for subset in connected_subsets(graph):
        seen.setdefault(canonicalize(graph.subgraph(subset))[0], None)
    return sorted(seen, key=lambda t: (t.size, t.key()))


def all_join_templates(schema: Schema, max_tables: int | None = None, include_single: bool = False) -> list[JoinTemplate]:
    """All acyclic connected templates using each table at most once.

    Each group contributes at most one instance per template.
    """
    names = [t.name for t in schema.tables]
    limit = len(names) if max_tables is None else max_tables
    found: dict[JoinTemplate, None] = {}
    for size in range(1 if include_single else 2, limit + 1):
        for combo in itertools.combinations(names, size):
            if size == 1:
                found.setdefault(JoinTemplate((combo[0],)), None)
                continue
            chosen = set(combo)
            options = []
            for g in schema.groups:
                present = sorted(set(g.tables) & chosen)
                subs = [frozenset(s) for k in range(2, len(present) + 1) for s in itertools.combinations(present, k)]
                options.append([None] + [(g.id, s) for s in subs])
            for pick in itertools.product(*options):
                inst = tuple(GroupInstance(gid, s) for gid, s in (p for p in pick if p is not None))
                graph = QueryGraph({t: t for t in combo}, inst)
                if inst and graph.is_connected() and graph.is_acyclic():
                    found.setdefault(canonicalize(graph)[0], None)
    return sorted(found, key=lambda t: (t.size, t.key()))


def template_query(schema: Schema, template: JoinTemplate, predicates=()) -> Query:
    return graph_query(schema, template.graph(), predicates)


def find_next_group(current: set[str] | frozenset[str], remaining: Iterable[GroupInstance]) -> GroupInstance:
    """Pick the next group to fold in: smallest id, touching ``current`` once it is non-empty."""
    remaining = sorted(remaining, key=lambda g: g.key)
    if not remaining:
        raise ValueError("no remaining groups")
    if not current:
        return remaining[0]
    for gi in remaining:
        if gi.aliases & set(current):
            return gi
    raise DisconnectedQueryError(f"no remaining group touches {sorted(current)}")
