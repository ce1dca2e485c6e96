"""Monotone rational-quadratic splines on [0, 1] and their differentiable op."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import autodiff as ad

MIN_BIN = 1e-3
MIN_DERIV = 1e-3


@dataclass(frozen=True)
class SplineParams:
    """K bins; widths and heights are positive and sum to one, derivs has K+1 entries."""

    widths: np.ndarray
    heights: np.ndarray
    derivs: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.widths, dtype=np.float64)
        h = np.asarray(self.heights, dtype=np.float64)
        d = np.asarray(self.derivs, dtype=np.float64)
        if w.ndim != 1 or w.shape != h.shape or d.shape != (w.size + 1,):
            raise ValueError("need K widths, K heights and K+1 derivatives")
        if np.any(w <= 0) or np.any(h <= 0) or np.any(d <= 0):
            raise ValueError("bin sizes and derivatives must be positive")
        if abs(w.sum() - 1) > 1e-9 or abs(h.sum() - 1) > 1e-9:
            raise ValueError("widths and heights must each sum to 1")
        if d[0] != 1.0 or d[-1] != 1.0:
            raise ValueError("boundary derivatives are fixed to 1")
        object.__setattr__(self, "widths", w)
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "derivs", d)

    @property
    def bins(self) -> int:
        return self.widths.size

    def knots(self) -> tuple[np.ndarray, np.ndarray]:
        xk = np.concatenate([[0.0], np.cumsum(self.widths)])
        yk = np.concatenate([[0.0], np.cumsum(self.heights)])
        xk[-1] = yk[-1] = 1.0
        return xk, yk

    @classmethod
    def identity(cls, bins: int = 8) -> "SplineParams":
        return cls(np.full(bins, 1.0 / bins), np.full(bins, 1.0 / bins), np.ones(bins + 1))

    @classmethod
    def from_raw(cls, raw) -> "SplineParams":
        w, h, d = raw_to_arrays(np.asarray(raw, dtype=np.float64)[None, :])
        return cls(w[0], h[0], d[0])


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def raw_to_arrays(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Numpy mirror of :func:`raw_to_params` (no tape)."""
    k = (raw.shape[1] + 1) // 3
    w = MIN_BIN + (1 - k * MIN_BIN) * _softmax(raw[:, :k])
    h = MIN_BIN + (1 - k * MIN_BIN) * _softmax(raw[:, k : 2 * k])
    z = raw[:, 2 * k :]
    inner = MIN_DERIV + np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)
    ones = np.ones((raw.shape[0], 1))
    return w, h, np.concatenate([ones, inner, ones], axis=1)


def raw_to_params(raw: ad.Tensor, bins: int) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """Map (N, 3K-1) unconstrained outputs to widths, heights and full derivatives."""
    if raw.shape[1] != 3 * bins - 1:
        raise ad.ShapeError(f"expected {3 * bins - 1} raw spline outputs, got {raw.shape[1]}")
    scale = 1 - bins * MIN_BIN
    w = ad.add(ad.mul(ad.softmax(ad.take_cols(raw, 0, bins)), scale), MIN_BIN)
    h = ad.add(ad.mul(ad.softmax(ad.take_cols(raw, bins, 2 * bins)), scale), MIN_BIN)
    inner = ad.add(ad.softplus(ad.take_cols(raw, 2 * bins, 3 * bins - 1)), MIN_DERIV)
    ones = ad.Tensor(np.ones((raw.shape[0], 1)))
    return w, h, ad.concat([ones, inner, ones], axis=1)


def identity_deriv_bias() -> float:
    """Raw value whose mapped interior derivative equals exactly one."""
    return float(np.log(np.expm1(1.0 - MIN_DERIV)))


def rq_spline(x, widths: ad.Tensor, heights: ad.Tensor, derivs: ad.Tensor) -> ad.Tensor:
    """Row-wise spline evaluation as a single tape node (values in x are constants or tensors)."""
    x = ad.as_tensor(x)
    widths, heights, derivs = ad.as_tensor(widths), ad.as_tensor(heights), ad.as_tensor(derivs)
    parents = (x, widths, heights, derivs)
    if ad.active_tape() is not None and any(p.requires_grad for p in parents):
        y, dydx, gw, gh, gd = _kernels.rq_spline(x.data, widths.data, heights.data, derivs.data, True)
        return ad.make(y, parents, lambda g: (g * dydx, g[:, None] * gw, g[:, None] * gh, g[:, None] * gd))
    y = _kernels.rq_spline(x.data, widths.data, heights.data, derivs.data, False)
    return ad.Tensor(y)


def spline_eval(params: SplineParams, x, return_flags: bool = False):
    """Evaluate one spline at points ``x``; values outside [0, 1] are clamped and flagged."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    flags = (x < 0.0) | (x > 1.0)
    xc = np.clip(x, 0.0, 1.0)
    n = xc.size
    y = _kernels.rq_spline(
        xc,
        np.broadcast_to(params.widths, (n, params.bins)),
        np.broadcast_to(params.heights, (n, params.bins)),
        np.broadcast_to(params.derivs, (n, params.bins + 1)),
        False,
    )
    return (y, flags) if return_flags else y
