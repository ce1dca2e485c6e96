"""All per-table primitive models of one schema, with invocation accounting."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, asdict
from typing import Sequence

from . import autodiff as ad
from .cardest import DEFAULT_BINS, CardEstModel, build_cardest
from .encoding import NormalizerSet, SetEncoder
from .lcs import DEFAULT_HIDDEN, DEFAULT_SKETCH_DIM, LcsModel
from .query import AliasQuery
from .schema import Schema
from .seeding import derive_seed


@dataclass
class ModelConfig:
    n_lcs: int = DEFAULT_SKETCH_DIM
    n_h: int = DEFAULT_HIDDEN
    cardest_kind: str = "auto"
    bins: int = DEFAULT_BINS
    hidden: tuple[int, ...] = (64, 64)
    set_hidden: int = 64
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"model config: unknown field(s) {sorted(unknown)}")
        data = dict(data)
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        return cls(**data)


@dataclass
class ModelBundle:
    schema: Schema
    normalizers: NormalizerSet
    config: ModelConfig
    cardest: dict[str, CardEstModel]
    lcs: dict[str, LcsModel]
    calls: Counter = field(default_factory=Counter)

    @classmethod
    def build(cls, schema: Schema, normalizers: NormalizerSet, config: ModelConfig | None = None) -> "ModelBundle":
        config = config or ModelConfig()
        cardest, lcs = {}, {}
        for table in schema.tables:
            t = table.name
            cardest[t] = build_cardest(
                schema,
                t,
                normalizers,
                config.cardest_kind,
                derive_seed(config.seed, "cardest", t),
                config.bins,
                config.hidden,
                config.set_hidden,
            )
            groups = schema.groups_of_table(t)
            if groups:
                enc = SetEncoder(schema, t, normalizers)
                lcs[t] = LcsModel(t, groups, enc, config.n_lcs, config.n_h, derive_seed(config.seed, "lcs", t))
        return cls(schema, normalizers, config, cardest, lcs)

    def table_size(self, table: str) -> int:
        return self.schema.table(table).cardinality

    def cardinalities(self, table: str, aqs: Sequence[AliasQuery]) -> ad.Tensor:
        self.calls["cardest"] += len(aqs)
        return self.cardest[table].cardinality(aqs)

    def sketches(self, table: str, aqs: Sequence[AliasQuery], groups: Sequence[str]) -> dict[str, ad.Tensor]:
        self.calls["lcs"] += len(aqs)
        return self.lcs[table].sketches(aqs, groups)

    def table_parameters(self, table: str) -> list[ad.Tensor]:
        params = self.cardest[table].parameters()
        if table in self.lcs:
            params = params + self.lcs[table].parameters()
        return params

    def parameters(self) -> list[ad.Tensor]:
        out = []
        for t in sorted(self.cardest):
            out.extend(self.table_parameters(t))
        return out

    def named_parameters(self) -> dict[str, ad.Tensor]:
        out = {}
        for t in sorted(self.cardest):
            for k, v in self.cardest[t].params.items():
                out[f"{t}/cardest/{k}"] = v
            if t in self.lcs:
                for k, v in self.lcs[t].params.items():
                    out[f"{t}/lcs/{k}"] = v
        return out
