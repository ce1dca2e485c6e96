"""Vectorized numpy rational-quadratic spline kernel (fallback backend).

Every row carries its own spline: ``widths`` and ``heights`` hold K positive
bin sizes summing to one, ``derivs`` the K+1 knot derivatives (boundary
entries included). Inputs outside (0, 1) are pinned to 0 / 1 with zero
gradient.
"""
from __future__ import annotations

import numpy as np


def rq_spline(x, widths, heights, derivs, need_grad=True):
    x = np.ascontiguousarray(x, dtype=np.float64)
    widths = np.ascontiguousarray(widths, dtype=np.float64)
    heights = np.ascontiguousarray(heights, dtype=np.float64)
    derivs = np.ascontiguousarray(derivs, dtype=np.float64)
    n, k_bins = widths.shape
    rows = np.arange(n)

    xk = np.zeros((n, k_bins + 1))
    yk = np.zeros((n, k_bins + 1))
    np.cumsum(widths[:, :-1], axis=1, out=xk[:, 1:k_bins])
    np.cumsum(heights[:, :-1], axis=1, out=yk[:, 1:k_bins])
    xk[:, k_bins] = 1.0
    yk[:, k_bins] = 1.0

    inside = (x > 0.0) & (x < 1.0)
    xc = np.where(inside, x, 0.5)
    b = (xk[:, 1:k_bins] <= xc[:, None]).sum(axis=1)

    x0, x1 = xk[rows, b], xk[rows, b + 1]
    y0, y1 = yk[rows, b], yk[rows, b + 1]
    d0, d1 = derivs[rows, b], derivs[rows, b + 1]
    w = x1 - x0
    h = y1 - y0
    s = h / w
    xi = (xc - x0) / w
    t = xi * (1.0 - xi)
    num = s * xi * xi + d0 * t
    c = d0 + d1 - 2.0 * s
    den = s + c * t
    r = num / den
    y = np.where(x >= 1.0, 1.0, np.where(inside, y0 + h * r, 0.0))
    if not need_grad:
        return y

    den2 = den * den
    one_2xi = 1.0 - 2.0 * xi
    r_s = (xi * xi * den - num * (1.0 - 2.0 * t)) / den2
    r_xi = ((2.0 * s * xi + d0 * one_2xi) * den - num * c * one_2xi) / den2
    r_d0 = t * (den - num) / den2
    r_d1 = -num * t / den2

    mask = inside.astype(np.float64)
    dydx = mask * h * r_xi / w
    dy_dx1 = mask * h * (r_s * (-h / (w * w)) + r_xi * (-xi / w))
    dy_dx0 = mask * (-h * r_xi / w) - dy_dx1
    dy_dh = mask * (r + h * r_s / w)
    dy_dy1 = dy_dh
    dy_dy0 = mask - dy_dh

    gknot_x = np.zeros((n, k_bins + 1))
    gknot_y = np.zeros((n, k_bins + 1))
    gknot_x[rows, b] += dy_dx0
    gknot_x[rows, b + 1] += dy_dx1
    gknot_y[rows, b] += dy_dy0
    gknot_y[rows, b + 1] += dy_dy1
    # knots 0 and K are pinned; interior knot i is the sum of bins j < i
    gw = np.zeros((n, k_bins))
    gh = np.zeros((n, k_bins))
    if k_bins > 1:
        gw[:, : k_bins - 1] = np.cumsum(gknot_x[:, k_bins - 1 : 0 : -1], axis=1)[:, ::-1]
        gh[:, : k_bins - 1] = np.cumsum(gknot_y[:, k_bins - 1 : 0 : -1], axis=1)[:, ::-1]
    gd = np.zeros((n, k_bins + 1))
    gd[rows, b] += mask * h * r_d0
    gd[rows, b + 1] += mask * h * r_d1
    return y, dydx, gw, gh, gd
