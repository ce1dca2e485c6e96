"""Desk-scale benchmark schemas and end-to-end experiment drivers."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .bundle import ModelBundle, ModelConfig
from .composer import Estimator
from .encoding import fit_normalizers
from .evaluator import EvalReport, evaluate_split, shift_suite
from .oracle import Dataset, GenConfig, TableGen, generate_dataset
from .schema import Column, JoinKeyGroup, JoinTemplate, Schema, Table, all_join_templates
from .trainer import TrainConfig, TrainReport, fit
from .workload import GranularityLaw, WorkloadSpec, apply_granularity_shift, apply_tcr_split, generate_workload


def _num(name: str, size: int) -> Column:
    return Column(name, "numeric-integer", (0, size))


def two_table_schema(rows: int = 2000, key_domain: int = 40) -> Schema:
    r = Table("R", (_num("x", key_domain), _num("r1", 50), _num("r2", 20)), rows)
    s = Table("S", (_num("x", key_domain), _num("s1", 50)), rows)
    return Schema((r, s), (JoinKeyGroup("x", frozenset({("R", "x"), ("S", "x")})),))


def two_table_gen() -> GenConfig:
    return GenConfig(
        tables={
            "R": TableGen(key_skew={"x": 1.0}, correlation={"r1": 0.9, "r2": 0.6}),
            "S": TableGen(key_skew={"x": 0.8}, key_shift={"x": 5}, correlation={"s1": 0.9}),
        }
    )


def four_table_schema(rows: int = 1500, x_domain: int = 30, y_domain: int = 20) -> Schema:
    """A, B, C share group x; C, D share group y: eight multi-table join templates."""
    a = Table("A", (_num("x", x_domain), _num("a1", 40), _num("a2", 10)), rows)
    b = Table("B", (_num("x", x_domain), _num("b1", 40)), rows)
    c = Table("C", (_num("x", x_domain), _num("y", y_domain), _num("c1", 40)), rows)
    d = Table("D", (_num("y", y_domain), _num("d1", 40)), rows)
    groups = (
        JoinKeyGroup("x", frozenset({("A", "x"), ("B", "x"), ("C", "x")})),
        JoinKeyGroup("y", frozenset({("C", "y"), ("D", "y")})),
    )
    return Schema((a, b, c, d), groups)


def four_table_gen() -> GenConfig:
    return GenConfig(
        tables={
            "A": TableGen(key_skew={"x": 1.0}, correlation={"a1": 0.9, "a2": 0.5}),
            "B": TableGen(key_skew={"x": 0.7}, key_shift={"x": 3}, correlation={"b1": 0.9}),
            "C": TableGen(key_skew={"x": 0.9, "y": 1.0}, correlation={"c1": 0.9}),
            "D": TableGen(key_skew={"y": 0.8}, key_shift={"y": 4}, correlation={"d1": 0.9}),
        }
    )


def desk_train_config(seed: int = 0, **overrides) -> TrainConfig:
    """Smaller batches and a faster step than the defaults: desk workloads hold a few thousand queries."""
    params = dict(batch_size=64, lr=2e-3, max_epochs=50, patience=8, seed=seed)
    params.update(overrides)
    return TrainConfig(**params)


def single_table_templates(schema: Schema) -> list[JoinTemplate]:
    return [JoinTemplate((t.name,)) for t in schema.tables]


@dataclass
class RunResult:
    estimator: Estimator
    bundle: ModelBundle
    train_report: TrainReport


def train_bundle(schema: Schema, workload, model_config: ModelConfig, train_config: TrainConfig) -> RunResult:
    bundle = ModelBundle.build(schema, fit_normalizers(schema, workload), model_config)
    report = fit(bundle, workload, train_config)
    return RunResult(Estimator(schema, bundle), bundle, report)


def unseen_template_experiment(
    n_lcs: int = 100,
    tcr: float = 0.5,
    queries_per_template: int = 500,
    seed: int = 0,
    train_config: TrainConfig | None = None,
    model_config: ModelConfig | None = None,
    dataset: Dataset | None = None,
) -> tuple[EvalReport, RunResult, list[JoinTemplate], list[JoinTemplate]]:
    """Train on a TCR-limited template subset of the four-table schema; test on everything."""
    schema = four_table_schema() if dataset is None else dataset.schema
    dataset = dataset or generate_dataset(schema, four_table_gen(), seed)
    templates = all_join_templates(schema)
    largest = max(templates, key=lambda t: (t.size, t.key()))
    train_t, unseen_t = apply_tcr_split(templates, tcr, seed, always_include=[largest])
    singles = single_table_templates(schema)
    train_spec = WorkloadSpec(tuple(train_t + singles), queries_per_template)
    test_spec = WorkloadSpec(tuple(templates), max(queries_per_template // 4, 10))
    train_wl = generate_workload(dataset, train_spec, seed)
    test_wl = generate_workload(dataset, test_spec, seed + 1000)
    mc = replace(model_config or ModelConfig(), n_lcs=n_lcs, seed=seed)
    run = train_bundle(schema, train_wl, mc, train_config or desk_train_config(seed))
    report = evaluate_split(run.estimator, test_wl, schema, train_t)
    return report, run, train_t, unseen_t


def sketch_dimension_experiment(
    n_lcs: int,
    queries_per_template: int = 1000,
    seed: int = 0,
    train_config: TrainConfig | None = None,
    model_config: ModelConfig | None = None,
) -> tuple[EvalReport, RunResult]:
    """Correlated two-table join: test Q-error on the join template as a function of n_lcs."""
    schema = two_table_schema()
    dataset = generate_dataset(schema, two_table_gen(), seed)
    join = all_join_templates(schema)
    train_spec = WorkloadSpec(tuple(join + single_table_templates(schema)), queries_per_template)
    test_spec = WorkloadSpec(tuple(join), max(queries_per_template // 5, 10))
    train_wl = generate_workload(dataset, train_spec, seed)
    test_wl = generate_workload(dataset, test_spec, seed + 1000)
    mc = replace(model_config or ModelConfig(), n_lcs=n_lcs, seed=seed)
    run = train_bundle(schema, train_wl, mc, train_config or desk_train_config(seed))
    return evaluate_split(run.estimator, test_wl, schema, join), run


def granularity_shift_experiment(
    queries_per_template: int = 600,
    seed: int = 0,
    cardest_kind: str = "arcdf",
    train_config: TrainConfig | None = None,
    model_config: ModelConfig | None = None,
) -> tuple[EvalReport, EvalReport]:
    """Train with range widths g outside [0.45, 0.55]; test in distribution and at g = 0.5."""
    schema = two_table_schema()
    dataset = generate_dataset(schema, two_table_gen(), seed)
    templates = all_join_templates(schema) + single_table_templates(schema)
    base = WorkloadSpec(tuple(templates), queries_per_template, granularity=GranularityLaw())
    train_spec, test_spec = apply_granularity_shift(base, schema)
    mc = replace(model_config or ModelConfig(), cardest_kind=cardest_kind, seed=seed)
    tc = train_config or desk_train_config(seed)

    def train_fn(workload):
        return train_bundle(schema, workload, mc, tc).estimator

    return shift_suite(dataset, train_spec, test_spec, train_fn, seed, "granularity")
