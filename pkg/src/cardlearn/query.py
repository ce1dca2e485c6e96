"""Query model: predicates, SPJ queries, labeled queries and per-alias subqueries."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

OPS = ("eq", "lt", "le", "gt", "ge", "in", "like", "is_null", "not_null")
RANGE_OPS = frozenset({"eq", "lt", "le", "gt", "ge"})
NULLARY_OPS = frozenset({"is_null", "not_null"})


class QueryError(ValueError):
    """A query is malformed or does not fit the schema."""


def _freeze_value(op: str, value: Any) -> Any:
    if op in NULLARY_OPS:
        return None
    if op == "in":
        if isinstance(value, (str, bytes)) or not isinstance(value, Iterable):
            raise QueryError(f"IN predicate needs a list literal, got {value!r}")
        return tuple(sorted(value, key=_sort_key))
    if isinstance(value, (list, tuple)):
        raise QueryError(f"operator {op!r} takes a scalar literal, got {value!r}")
    return value


def _sort_key(value: Any) -> tuple[str, Any]:
    # mixed literal types must still sort deterministically
    return (type(value).__name__, value)


@dataclass(frozen=True)
class Predicate:
    alias: str
    column: str
    op: str
    value: Any = None

    def __post_init__(self) -> None:
        if self.op not in OPS:
            raise QueryError(f"unsupported predicate operator {self.op!r}")
        object.__setattr__(self, "value", _freeze_value(self.op, self.value))

    def key(self) -> tuple[str, str, str]:
        return (self.column, self.op, repr(self.value))


@dataclass(frozen=True)
class AliasQuery:
    """Single-table subquery: the predicates one alias contributes, alias stripped."""

    table: str
    predicates: tuple[tuple[str, str, Any], ...] = ()

    @classmethod
    def build(cls, table: str, predicates: Iterable[Predicate]) -> "AliasQuery":
        items = sorted(predicates, key=Predicate.key)
        return cls(table, tuple((p.column, p.op, p.value) for p in items))

    def signature(self) -> tuple:
        return (self.table, self.predicates)


@dataclass(frozen=True)
class Query:
    """SPJ query with inner equi-joins.

    ``table_refs`` maps alias to table name, ``join_conditions`` holds pairs of
    ``(alias, column)`` endpoints and ``predicates`` the non-join filters.
    """

    table_refs: dict[str, str]
    join_conditions: tuple[tuple[tuple[str, str], tuple[str, str]], ...] = ()
    predicates: tuple[Predicate, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "table_refs", dict(self.table_refs))
        conds = []
        for cond in self.join_conditions:
            (la, lc), (ra, rc) = cond
            conds.append(((str(la), str(lc)), (str(ra), str(rc))))
        object.__setattr__(self, "join_conditions", tuple(conds))
        object.__setattr__(self, "predicates", tuple(self.predicates))

    @property
    def aliases(self) -> list[str]:
        return sorted(self.table_refs)

    def alias_query(self, alias: str) -> AliasQuery:
        return AliasQuery.build(self.table_refs[alias], (p for p in self.predicates if p.alias == alias))

    def to_dict(self) -> dict:
        return {
            "tables": dict(sorted(self.table_refs.items())),
            "joins": [[f"{la}.{lc}", f"{ra}.{rc}"] for (la, lc), (ra, rc) in self.join_conditions],
            "predicates": [
                [p.alias, p.column, p.op] + ([] if p.op in NULLARY_OPS else [list(p.value) if p.op == "in" else p.value])
                for p in self.predicates
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Query":
        unknown = set(data) - {"tables", "joins", "predicates"}
        if unknown:
            raise QueryError(f"unknown query field(s): {sorted(unknown)}")
        if "tables" not in data or not isinstance(data["tables"], dict) or not data["tables"]:
            raise QueryError("field 'tables' must be a non-empty object of alias -> table")
        joins = []
        for item in data.get("joins", []):
            if not (isinstance(item, list) and len(item) == 2):
                raise QueryError(f"field 'joins': expected [left, right] pair, got {item!r}")
            ends = []
            for end in item:
                if not isinstance(end, str) or end.count(".") != 1:
                    raise QueryError(f"field 'joins': endpoint must be 'alias.column', got {end!r}")
                ends.append(tuple(end.split(".")))
            joins.append(tuple(ends))
        preds = []
        for item in data.get("predicates", []):
            if not isinstance(item, list) or len(item) not in (3, 4):
                raise QueryError(f"field 'predicates': expected [alias, column, op(, literal)], got {item!r}")
            alias, column, op = item[:3]
            value = item[3] if len(item) == 4 else None
            if op not in NULLARY_OPS and len(item) != 4:
                raise QueryError(f"field 'predicates': operator {op!r} needs a literal")
            preds.append(Predicate(alias, column, op, value))
        return cls(dict(data["tables"]), tuple(joins), tuple(preds))


@dataclass(frozen=True)
class LabeledQuery:
    query: Query
    cardinality: int

    def to_dict(self) -> dict:
        record = self.query.to_dict()
        record["cardinality"] = int(self.cardinality)
        return record

    @classmethod
    def from_dict(cls, data: dict) -> "LabeledQuery":
        if "cardinality" not in data:
            raise QueryError("field 'cardinality' missing")
        card = data["cardinality"]
        if not isinstance(card, int) or isinstance(card, bool) or card < 0:
            raise QueryError(f"field 'cardinality' must be a non-negative integer, got {card!r}")
        rest = {k: v for k, v in data.items() if k != "cardinality"}
        return cls(Query.from_dict(rest), card)


@dataclass(frozen=True)
class GroupInstance:
    """Aliases of one query connected through a single join-key group."""

    group: str
    aliases: frozenset[str] = field(default_factory=frozenset)

    @property
    def key(self) -> tuple[str, tuple[str, ...]]:
        return (self.group, tuple(sorted(self.aliases)))
