"""Per-table cardinality models: an autoregressive spline CDF and a set regressor."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .encoding import NormalizerSet, SetEncoder, encode_vertices
from .query import AliasQuery
from .schema import Schema
from .splines import SplineParams, identity_deriv_bias, raw_to_arrays, raw_to_params, rq_spline

DEFAULT_BINS = 8
DEFAULT_HIDDEN = (64, 64)


def params_to_dict(params: dict[str, ad.Tensor]) -> dict:
    return {k: {"shape": list(v.shape), "data": v.data.reshape(-1).tolist()} for k, v in params.items()}


def params_from_dict(data: dict, expected: dict[str, ad.Tensor]) -> None:
    if set(data) != set(expected):
        raise ValueError(f"parameter names differ: {sorted(set(data) ^ set(expected))}")
    for name, tensor in expected.items():
        entry = data[name]
        shape = tuple(entry["shape"])
        if shape != tensor.shape:
            raise ValueError(f"parameter {name!r}: shape {shape} != {tensor.shape}")
        tensor.data[...] = np.asarray(entry["data"], dtype=np.float64).reshape(shape)


class CardEstModel:
    """Common surface: ``selectivity`` on a batch of same-table subqueries."""

    kind = "base"

    def __init__(self, table: str, table_size: int) -> None:
        self.table = table
        self.table_size = int(table_size)
        self.params: dict[str, ad.Tensor] = {}

    def parameters(self) -> list[ad.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def selectivity(self, aqs: Sequence[AliasQuery]) -> ad.Tensor:
        raise NotImplementedError

    def cardinality(self, aqs: Sequence[AliasQuery]) -> ad.Tensor:
        return ad.mul(self.selectivity(aqs), float(self.table_size))


def made_masks(d: int, hidden: Sequence[int], out_per_dim: int) -> list[np.ndarray]:
    """Connectivity masks so output block i sees only inputs 0..i-1."""
    degrees = [np.arange(1, d + 1)]
    for h in hidden:
        degrees.append(np.arange(h) % max(d - 1, 1) + 1)
    masks = [(degrees[l + 1][None, :] >= degrees[l][:, None]).astype(np.float64) for l in range(len(hidden))]
    out_deg = np.repeat(np.arange(1, d + 1), out_per_dim)
    masks.append((out_deg[None, :] > degrees[-1][:, None]).astype(np.float64))
    return masks


class ArCdfModel(CardEstModel):
    """F(x) = prod_i s_i(x_i; theta_i(x_<i)) with monotone rational-quadratic splines."""

    kind = "arcdf"

    def __init__(
        self,
        table: str,
        table_size: int,
        columns: Sequence[str],
        normalizers: NormalizerSet,
        bins: int = DEFAULT_BINS,
        hidden: Sequence[int] = DEFAULT_HIDDEN,
        seed: int = 0,
    ) -> None:
        super().__init__(table, table_size)
        self.columns = list(columns)
        self.normalizers = normalizers
        self.bins = int(bins)
        self.hidden = tuple(int(h) for h in hidden)
        self.d = len(self.columns)
        self.per_dim = 3 * self.bins - 1
        self.masks = made_masks(self.d, self.hidden, self.per_dim) if self.d else []
        if self.d:
            rng = np.random.default_rng(seed)
            sizes = [self.d, *self.hidden, self.d * self.per_dim]
            for l in range(len(sizes) - 1):
                scale = 1.0 / np.sqrt(sizes[l])
                if l == len(sizes) - 2:
                    scale *= 0.1
                self.params[f"w{l}"] = ad.parameter(rng.normal(0.0, scale, (sizes[l], sizes[l + 1])))
                bias = np.zeros(sizes[l + 1])
                if l == len(sizes) - 2:
                    # start at the identity spline: uniform bins, unit derivatives
                    bias.reshape(self.d, self.per_dim)[:, 2 * self.bins :] = identity_deriv_bias()
                self.params[f"b{l}"] = ad.parameter(bias)

    def raw_outputs(self, points) -> ad.Tensor:
        h = ad.as_tensor(points)
        n_layers = len(self.hidden) + 1
        for l in range(n_layers):
            h = ad.masked_linear(h, self.params[f"w{l}"], self.params[f"b{l}"], self.masks[l])
            if l < n_layers - 1:
                h = ad.tanh(h)
        return h

    def cdf(self, points) -> ad.Tensor:
        """Joint CDF at each row of ``points`` (M, d)."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[None, :]
        m = pts.shape[0]
        if self.d == 0:
            return ad.Tensor(np.ones(m))
        raw = ad.reshape(self.raw_outputs(pts), (m * self.d, self.per_dim))
        w, h, deriv = raw_to_params(raw, self.bins)
        factors = rq_spline(pts.reshape(-1), w, h, deriv)
        return ad.prod_rows(ad.reshape(factors, (m, self.d)))

    def spline_params(self, point) -> list[SplineParams]:
        """Spline of every attribute given the conditioning point (no tape)."""
        with ad.no_grad():
            raw = self.raw_outputs(np.asarray(point, dtype=np.float64)[None, :]).data
        w, h, d = raw_to_arrays(raw.reshape(self.d, self.per_dim))
        return [SplineParams(w[i], h[i], d[i]) for i in range(self.d)]

    def vertices(self, aqs: Sequence[AliasQuery]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pts, signs, seg = [], [], []
        for i, aq in enumerate(aqs):
            p, s = encode_vertices(aq, self.columns, self.normalizers)
            pts.append(p)
            signs.append(s)
            seg.append(np.full(len(s), i, dtype=np.int64))
        return np.concatenate(pts), np.concatenate(signs), np.concatenate(seg)

    def selectivity(self, aqs: Sequence[AliasQuery]) -> ad.Tensor:
        pts, signs, seg = self.vertices(aqs)
        if len(signs) == 0:
            return ad.Tensor(np.zeros(len(aqs)))
        return ad.segment_sum(self.cdf(pts), seg, len(aqs), weights=signs)

    def meta(self) -> dict:
        return {"columns": self.columns, "bins": self.bins, "hidden": list(self.hidden)}


class SetRegressorModel(CardEstModel):
    """Shared per-predicate layer, mean pooling, hidden layer and a sigmoid head."""

    kind = "set"

    def __init__(self, table: str, table_size: int, encoder: SetEncoder, hidden: int = 64, seed: int = 0) -> None:
        super().__init__(table, table_size)
        self.encoder = encoder
        self.hidden_width = int(hidden)
        rng = np.random.default_rng(seed)
        w = encoder.width
        self.params = {
            "w0": ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(w), (w, hidden))),
            "b0": ad.parameter(np.zeros(hidden)),
            "w1": ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, hidden))),
            "b1": ad.parameter(np.zeros(hidden)),
            "w2": ad.parameter(rng.normal(0.0, 0.1 / np.sqrt(hidden), (hidden, 1))),
            "b2": ad.parameter(np.zeros(1)),
        }

    def selectivity(self, aqs: Sequence[AliasQuery]) -> ad.Tensor:
        feats, seg, weights = self.encoder.encode_batch(list(aqs))
        p = self.params
        h = ad.tanh(ad.linear(feats, p["w0"], p["b0"]))
        pooled = ad.segment_sum(h, seg, len(aqs), weights=weights)
        h2 = ad.tanh(ad.linear(pooled, p["w1"], p["b1"]))
        logit = ad.linear(h2, p["w2"], p["b2"])
        return ad.sigmoid(ad.reshape(logit, (len(aqs),)))

    def meta(self) -> dict:
        return {"hidden": self.hidden_width, "hash_dim": self.encoder.hash_dim}


def uses_arcdf(schema: Schema, table: str) -> bool:
    """ArCDF iff every filterable column of the table is numeric."""
    return all(c.is_numeric for c in schema.filterable_columns(table))


def build_cardest(
    schema: Schema,
    table: str,
    normalizers: NormalizerSet,
    kind: str = "auto",
    seed: int = 0,
    bins: int = DEFAULT_BINS,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    set_hidden: int = 64,
) -> CardEstModel:
    size = schema.table(table).cardinality
    if kind == "auto":
        kind = "arcdf" if uses_arcdf(schema, table) else "set"
    if kind == "arcdf":
        if not uses_arcdf(schema, table):
            raise ValueError(f"table {table!r} has non-numeric filterable columns; ArCDF unsupported")
        cols = [c.name for c in schema.filterable_columns(table)]
        return ArCdfModel(table, size, cols, normalizers, bins, hidden, seed)
    if kind == "set":
        return SetRegressorModel(table, size, SetEncoder(schema, table, normalizers), set_hidden, seed)
    raise ValueError(f"unknown CardEst model kind {kind!r}")


# convenience wrappers -------------------------------------------------------


def arcdf_cdf(model: ArCdfModel, x) -> np.ndarray | float:
    with ad.no_grad():
        out = model.cdf(np.asarray(x, dtype=np.float64)).data
    return float(out[0]) if np.ndim(x) == 1 else out


def arcdf_selectivity(model: ArCdfModel, aq: AliasQuery) -> float:
    with ad.no_grad():
        return float(model.selectivity([aq]).data[0])


def set_regressor_estimate(model: SetRegressorModel, aq: AliasQuery) -> float:
    with ad.no_grad():
        return float(model.selectivity([aq]).data[0])
