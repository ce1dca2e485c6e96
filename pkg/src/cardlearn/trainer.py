"""End-to-end training of all primitive models through the composer."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .bundle import ModelBundle
from .composer import PreparedQuery, compose_batch, prepare
from .query import LabeledQuery
from .schema import JoinTemplate
from .seeding import rng_for

log = logging.getLogger("cardlearn.trainer")

LOSSES = ("sle", "se", "mixed")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 128
    max_epochs: int = 50
    lr: float = 1e-3
    loss: str = "sle"
    seed: int = 0
    patience: int = 5
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"train config: unknown field(s) {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def loss_terms(est: ad.Tensor, labels: np.ndarray, kind: str = "sle") -> tuple[ad.Tensor, np.ndarray]:
    """Per-query loss and the mask of queries on the square-error fallback branch."""
    c = np.maximum(np.asarray(labels, dtype=np.float64), 1.0)
    if not np.all(np.isfinite(est.data)):
        raise TrainingError("non-finite estimate reached the loss")
    pos = est.data > 0
    se = ad.div(ad.square(ad.sub(est, c)), c * c)
    if kind == "se":
        return se, ~pos
    safe = ad.where(pos, est, ad.Tensor(np.ones(est.shape)))
    sle = ad.square(ad.sub(ad.log(safe), np.log(c)))
    sle = ad.where(pos, sle, se)
    if kind == "sle":
        return sle, ~pos
    return ad.mul(ad.add(sle, se), 0.5), ~pos


def loss(est: float, true: float, kind: str = "sle") -> float:
    """Scalar loss for one estimate / label pair."""
    if not (math.isfinite(est) and math.isfinite(true)):
        raise TrainingError(f"non-finite loss input ({est}, {true})")
    per, _ = loss_terms(ad.Tensor(np.array([est])), np.array([true]), kind)
    return float(per.data[0])


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adaptive moments with per-parameter step counts, so untouched tensors never move."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: dict[int, list] = {}

    def step(self, params: Sequence[ad.Tensor]) -> None:
        for p in params:
            st = self.state.get(id(p))
            if st is None:
                st = self.state[id(p)] = [np.zeros_like(p.data), np.zeros_like(p.data), 0]
            m, v, _ = st
            st[2] += 1
            t = st[2]
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1**t)
            vhat = v / (1 - self.beta2**t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# workload preparation
# ---------------------------------------------------------------------------


@dataclass
class TemplateSet:
    template: JoinTemplate
    queries: list[PreparedQuery]
    labels: np.ndarray

    def per_label(self, idx) -> dict[str, list]:
        return {lab: [self.queries[i].per_label[lab] for i in idx] for lab in self.template.labels}


def group_by_template(schema, workload: Sequence[LabeledQuery]) -> list[TemplateSet]:
    buckets: dict[JoinTemplate, list] = {}
    for lq in workload:
        p = prepare(schema, lq.query)
        buckets.setdefault(p.template, []).append((p, lq.cardinality))
    out = []
    for template in sorted(buckets, key=lambda t: t.key()):
        items = buckets[template]
        out.append(TemplateSet(template, [p for p, _ in items], np.array([c for _, c in items], dtype=np.float64)))
    return out


def split_validation(sets: list[TemplateSet], fraction: float, seed: int) -> tuple[list[TemplateSet], list[TemplateSet]]:
    """Per-template holdout of round(fraction * n) queries (never the whole template)."""
    rng = rng_for(seed, "validation")
    train, val = [], []
    for ts in sets:
        n = len(ts.queries)
        k = min(int(round(fraction * n)), n - 1) if n > 1 else 0
        perm = rng.permutation(n)
        vi, ti = np.sort(perm[:k]), np.sort(perm[k:])
        train.append(TemplateSet(ts.template, [ts.queries[i] for i in ti], ts.labels[ti]))
        if k:
            val.append(TemplateSet(ts.template, [ts.queries[i] for i in vi], ts.labels[vi]))
    return train, val


# ---------------------------------------------------------------------------
# epochs
# ---------------------------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float | None
    negative_rate: float
    seconds: float


def _involved_params(bundle: ModelBundle, template: JoinTemplate) -> list[ad.Tensor]:
    out = []
    for t in sorted(set(template.node_multiset)):
        out.extend(bundle.table_parameters(t))
    return out


def batch_loss(bundle: ModelBundle, ts: TemplateSet, idx, kind: str) -> tuple[ad.Tensor, np.ndarray]:
    est, _ = compose_batch(bundle, bundle.schema, ts.template, ts.per_label(idx), serving=False)
    per, fallback = loss_terms(est, ts.labels[idx], kind)
    return ad.mean(per), fallback


def evaluate_loss(bundle: ModelBundle, sets: list[TemplateSet], config: TrainConfig) -> float:
    total, count = 0.0, 0
    with ad.no_grad():
        for ts in sets:
            for start in range(0, len(ts.queries), config.batch_size):
                idx = np.arange(start, min(start + config.batch_size, len(ts.queries)))
                l, _ = batch_loss(bundle, ts, idx, config.loss)
                total += l.item() * len(idx)
                count += len(idx)
    return total / max(count, 1)


def train_epoch(
    bundle: ModelBundle,
    sets: list[TemplateSet],
    config: TrainConfig,
    optimizer: Adam,
    rng: np.random.Generator,
    epoch: int = 0,
) -> tuple[float, float]:
    """One pass: template-pure mini-batches in globally shuffled order. Returns (mean loss, fallback rate)."""
    batches = []
    for si, ts in enumerate(sets):
        perm = rng.permutation(len(ts.queries))
        for start in range(0, len(perm), config.batch_size):
            batches.append((si, perm[start : start + config.batch_size]))
    order = rng.permutation(len(batches))
    all_params = bundle.parameters()
    total, count, fallback = 0.0, 0, 0
    for bi in order:
        si, idx = batches[bi]
        ts = sets[si]
        for p in all_params:
            p.zero_grad()
        with ad.Tape() as tape:
            l, fb = batch_loss(bundle, ts, idx, config.loss)
        value = l.item()
        if not math.isfinite(value):
            raise TrainingError(
                f"non-finite loss at epoch {epoch}, template {ts.template.key()}, "
                f"labels {ts.labels[idx][:5].tolist()}..."
            )
        tape.backward(l)
        for p in all_params:
            if not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient at epoch {epoch}, template {ts.template.key()}")
        optimizer.step(_involved_params(bundle, ts.template))
        if log.isEnabledFor(logging.DEBUG):
            for q, f in zip(idx, fb):
                log.debug("epoch %d template %s query %d branch %s", epoch, ts.template.key(), int(q), "se" if f else "sle")
        total += value * len(idx)
        count += len(idx)
        fallback += int(fb.sum())
    return total / max(count, 1), fallback / max(count, 1)


@dataclass
class TrainReport:
    epochs: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    best_loss: float = math.inf
    stopped_early: bool = False
    seconds: float = 0.0

    @property
    def train_losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    def to_dict(self) -> dict:
        return {
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_loss": self.best_loss,
            "stopped_early": self.stopped_early,
            "seconds": self.seconds,
        }


def _snapshot(bundle: ModelBundle) -> list[np.ndarray]:
    return [p.data.copy() for p in bundle.parameters()]


def _restore(bundle: ModelBundle, snap: list[np.ndarray]) -> None:
    for p, s in zip(bundle.parameters(), snap):
        p.data[...] = s


def fit(bundle: ModelBundle, workload: Sequence[LabeledQuery], config: TrainConfig | None = None, progress=None) -> TrainReport:
    """Train until ``max_epochs`` or until validation loss stalls for ``patience`` epochs.

    The parameters of the best epoch are restored on return.
    """
    config = config or TrainConfig()
    if not workload:
        raise ValueError("empty training workload")
    sets = group_by_template(bundle.schema, workload)
    train_sets, val_sets = split_validation(sets, config.val_fraction, config.seed)
    optimizer = Adam(config.lr, config.beta1, config.beta2, config.eps)
    rng = rng_for(config.seed, "batches")
    report = TrainReport()
    best = _snapshot(bundle)
    start = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        train_loss, neg_rate = train_epoch(bundle, train_sets, config, optimizer, rng, epoch)
        val_loss = evaluate_loss(bundle, val_sets, config) if val_sets else None
        metrics = EpochMetrics(epoch, train_loss, val_loss, neg_rate, time.perf_counter() - t0)
        report.epochs.append(metrics)
        if progress is not None:
            progress(metrics)
        monitored = val_loss if val_loss is not None else train_loss
        if monitored < report.best_loss:
            report.best_loss, report.best_epoch = monitored, epoch
            best = _snapshot(bundle)
        elif epoch - report.best_epoch > config.patience:
            report.stopped_early = True
            break
    _restore(bundle, best)
    report.seconds = time.perf_counter() - start
    return report
