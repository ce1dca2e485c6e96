"""Learned count sketches: a shared set encoder with one softmax head per join-key group."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .encoding import SetEncoder
from .query import AliasQuery

DEFAULT_HIDDEN = 256
DEFAULT_SKETCH_DIM = 100


class LcsModel:
    def __init__(
        self,
        table: str,
        groups: Sequence[str],
        encoder: SetEncoder,
        n_lcs: int = DEFAULT_SKETCH_DIM,
        n_h: int = DEFAULT_HIDDEN,
        seed: int = 0,
    ) -> None:
        if n_lcs < 1:
            raise ValueError("sketch dimension must be >= 1")
        self.table = table
        self.groups = sorted(groups)
        self.encoder = encoder
        self.n_lcs = int(n_lcs)
        self.n_h = int(n_h)
        rng = np.random.default_rng(seed)
        w = encoder.width
        self.params: dict[str, ad.Tensor] = {
            "enc_w0": ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(w), (w, n_h))),
            "enc_b0": ad.parameter(np.zeros(n_h)),
            "enc_w1": ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(n_h), (n_h, n_h))),
            "enc_b1": ad.parameter(np.zeros(n_h)),
        }
        for g in self.groups:
            self.params[f"head_{g}_w"] = ad.parameter(rng.normal(0.0, 0.1 / np.sqrt(n_h), (n_h, n_lcs)))
            self.params[f"head_{g}_b"] = ad.parameter(np.zeros(n_lcs))

    def parameters(self) -> list[ad.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def embed(self, aqs: Sequence[AliasQuery]) -> ad.Tensor:
        """E_q: pooled per-predicate features through the shared layers, (B, n_h)."""
        feats, seg, weights = self.encoder.encode_batch(list(aqs))
        p = self.params
        h = ad.tanh(ad.linear(feats, p["enc_w0"], p["enc_b0"]))
        pooled = ad.segment_sum(h, seg, len(aqs), weights=weights)
        return ad.tanh(ad.linear(pooled, p["enc_w1"], p["enc_b1"]))

    def sketches(self, aqs: Sequence[AliasQuery], groups: Sequence[str] | None = None) -> dict[str, ad.Tensor]:
        groups = self.groups if groups is None else list(groups)
        for g in groups:
            if g not in self.groups:
                raise KeyError(f"table {self.table!r} has no sketch head for group {g!r}")
        emb = self.embed(aqs)
        return {g: ad.softmax(ad.linear(emb, self.params[f"head_{g}_w"], self.params[f"head_{g}_b"])) for g in groups}

    def meta(self) -> dict:
        return {"groups": self.groups, "n_lcs": self.n_lcs, "n_h": self.n_h, "hash_dim": self.encoder.hash_dim}


def sketch(model: LcsModel, aq: AliasQuery, group: str) -> np.ndarray:
    if aq.table != model.table:
        raise ValueError(f"query on {aq.table!r} given to the sketch model of {model.table!r}")
    with ad.no_grad():
        return model.sketches([aq], [group])[group].data[0].copy()


def approximation_quality(oracle, bundle, pairs, group: str) -> dict:
    """Join-size Q-error of sketch dot products against exact key-frequency dot products.

    ``pairs`` holds ``(left AliasQuery, right AliasQuery)``; ``oracle`` is a
    Dataset and ``bundle`` a ModelBundle. Test-only: it reads data.
    """
    from .evaluator import qerror
    from .oracle import join_key_frequencies

    errs = []
    for left, right in pairs:
        fl = join_key_frequencies(oracle, left, group)
        fr = join_key_frequencies(oracle, right, group)
        true = sum(c * fr.counts.get(k, 0) for k, c in fl.counts.items())
        with ad.no_grad():
            cl = float(bundle.cardest[left.table].cardinality([left]).data[0])
            cr = float(bundle.cardest[right.table].cardinality([right]).data[0])
            vl = bundle.lcs[left.table].sketches([left], [group])[group].data[0]
            vr = bundle.lcs[right.table].sketches([right], [group])[group].data[0]
        est = cl * cr * float(np.dot(vl, vr))
        errs.append(qerror(est, max(true, 1)))
    errs = np.asarray(errs)
    return {
        "count": int(errs.size),
        "median": float(np.median(errs)),
        "p95": float(np.percentile(errs, 95)),
        "mean": float(errs.mean()),
    }
