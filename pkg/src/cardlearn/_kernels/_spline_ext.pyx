# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rational-quadratic spline kernel; mirrors _spline_py.rq_spline."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def rq_spline(x, widths, heights, derivs, bint need_grad=True):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] wv = np.ascontiguousarray(widths, dtype=np.float64)
    cdef const double[:, ::1] hv = np.ascontiguousarray(heights, dtype=np.float64)
    cdef const double[:, ::1] dv = np.ascontiguousarray(derivs, dtype=np.float64)
    cdef Py_ssize_t n = wv.shape[0]
    cdef Py_ssize_t kb = wv.shape[1]
    cdef Py_ssize_t i, j, b

    y_arr = np.zeros(n)
    cdef double[::1] y = y_arr
    dydx_arr = np.zeros(n)
    gw_arr = np.zeros((n, kb))
    gh_arr = np.zeros((n, kb))
    gd_arr = np.zeros((n, kb + 1))
    cdef double[::1] dydx = dydx_arr
    cdef double[:, ::1] gw = gw_arr
    cdef double[:, ::1] gh = gh_arr
    cdef double[:, ::1] gd = gd_arr

    cdef double xval, x0, x1, y0, y1, d0, d1, w, h, s, xi, t, num, c, den, r
    cdef double den2, one_2xi, r_s, r_xi, dy_dx0, dy_dx1, dy_dh, acc_x, acc_y

    for i in range(n):
        xval = xv[i]
        if xval >= 1.0:
            y[i] = 1.0
            continue
        if xval <= 0.0:
            continue
        # locate the bin; knot K is pinned to 1
        x0 = 0.0
        y0 = 0.0
        b = 0
        while b < kb - 1 and x0 + wv[i, b] <= xval:
            x0 += wv[i, b]
            y0 += hv[i, b]
            b += 1
        if b == kb - 1:
            x1 = 1.0
            y1 = 1.0
        else:
            x1 = x0 + wv[i, b]
            y1 = y0 + hv[i, b]
        d0 = dv[i, b]
        d1 = dv[i, b + 1]
        w = x1 - x0
        h = y1 - y0
        s = h / w
        xi = (xval - x0) / w
        t = xi * (1.0 - xi)
        num = s * xi * xi + d0 * t
        c = d0 + d1 - 2.0 * s
        den = s + c * t
        r = num / den
        y[i] = y0 + h * r
        if not need_grad:
            continue

        den2 = den * den
        one_2xi = 1.0 - 2.0 * xi
        r_s = (xi * xi * den - num * (1.0 - 2.0 * t)) / den2
        r_xi = ((2.0 * s * xi + d0 * one_2xi) * den - num * c * one_2xi) / den2
        dydx[i] = h * r_xi / w
        dy_dx1 = h * (r_s * (-h / (w * w)) + r_xi * (-xi / w))
        dy_dx0 = -h * r_xi / w - dy_dx1
        dy_dh = r + h * r_s / w

        # bin j < knot index feeds that knot; knots 0 and K carry no gradient
        for j in range(kb - 1):
            acc_x = 0.0
            acc_y = 0.0
            if j < b and b >= 1:
                acc_x += dy_dx0
                acc_y += 1.0 - dy_dh
            if j < b + 1 and b + 1 <= kb - 1:
                acc_x += dy_dx1
                acc_y += dy_dh
            gw[i, j] = acc_x
            gh[i, j] = acc_y
        gd[i, b] = h * t * (den - num) / den2
        gd[i, b + 1] = -h * num * t / den2

    if not need_grad:
        return y_arr
    return y_arr, dydx_arr, gw_arr, gh_arr, gd_arr
