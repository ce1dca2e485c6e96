import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cardlearn import _kernels
from cardlearn import autodiff as ad
from cardlearn.splines import (
    MIN_BIN,
    SplineParams,
    identity_deriv_bias,
    raw_to_arrays,
    raw_to_params,
    rq_spline,
    spline_eval,
)


def reference_spline(x: float, w, h, d) -> tuple[float, float]:
    """Scalar rational-quadratic transform and its slope, written out directly."""
    if x <= 0:
        return 0.0, 0.0
    if x >= 1:
        return 1.0, 0.0
    xk = yk = 0.0
    for k in range(len(w)):
        if x < xk + w[k] or k == len(w) - 1:
            break
        xk += w[k]
        yk += h[k]
    s = h[k] / w[k]
    xi = (x - xk) / w[k]
    t = xi * (1 - xi)
    den = s + (d[k] + d[k + 1] - 2 * s) * t
    y = yk + h[k] * (s * xi * xi + d[k] * t) / den
    slope = s * s * (d[k + 1] * xi * xi + 2 * s * t + d[k] * (1 - xi) ** 2) / den**2
    return y, slope


def random_params(rng, bins=8):
    return SplineParams.from_raw(rng.normal(0, 1.5, 3 * bins - 1))


@pytest.fixture(params=_kernels.available_backends())
def backend(request):
    prev = _kernels.use_backend(request.param)
    yield request.param
    _kernels.use_backend(prev)


def test_identity_configuration(backend):
    x = np.linspace(0, 1, 1001)
    np.testing.assert_allclose(spline_eval(SplineParams.identity(8), x), x, atol=1e-12, rtol=0)


def test_identity_from_raw_bias():
    raw = np.zeros((1, 23))
    raw[0, 16:] = identity_deriv_bias()
    w, h, d = raw_to_arrays(raw)
    np.testing.assert_allclose(d, 1.0, atol=1e-15)
    np.testing.assert_allclose(w, 1 / 8, atol=1e-15)


def test_endpoints(backend, rng):
    for _ in range(10):
        p = random_params(rng)
        assert spline_eval(p, 0.0)[0] == 0.0
        assert spline_eval(p, 1.0)[0] == 1.0


def test_grid_monotone(backend, rng):
    for _ in range(10):
        p = random_params(rng)
        x = np.linspace(0, 1 - 1e-3, 1000)
        assert np.all(spline_eval(p, x + 1e-3) > spline_eval(p, x))


def test_matches_reference_formula(backend, rng):
    for _ in range(5):
        p = random_params(rng, bins=6)
        x = rng.uniform(0, 1, 200)
        n = x.size
        y, dydx, *_ = _kernels.rq_spline(
            x, np.tile(p.widths, (n, 1)), np.tile(p.heights, (n, 1)), np.tile(p.derivs, (n, 1))
        )
        ref = np.array([reference_spline(v, p.widths, p.heights, p.derivs) for v in x])
        np.testing.assert_allclose(y, ref[:, 0], atol=1e-12)
        np.testing.assert_allclose(dydx, ref[:, 1], rtol=1e-10)


def test_out_of_range_clamped_and_flagged():
    y, flags = spline_eval(SplineParams.identity(4), [-0.5, 0.3, 1.7], return_flags=True)
    np.testing.assert_allclose(y, [0.0, 0.3, 1.0])
    np.testing.assert_array_equal(flags, [True, False, True])


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        SplineParams(np.array([0.5, 0.6]), np.array([0.5, 0.5]), np.ones(3))
    with pytest.raises(ValueError):
        SplineParams(np.array([0.5, 0.5]), np.array([0.5, 0.5]), np.array([2.0, 1.0, 1.0]))


def test_backends_agree(rng):
    if len(_kernels.available_backends()) < 2:
        pytest.skip("compiled kernel not built")
    n, k = 500, 8
    w, h, d = raw_to_arrays(rng.normal(size=(n, 3 * k - 1)))
    x = np.concatenate([rng.uniform(0, 1, n - 4), [0.0, 1.0, -0.1, 1.1]])
    outs = {}
    for name in ("python", "cython"):
        prev = _kernels.use_backend(name)
        outs[name] = _kernels.rq_spline(x, w, h, d)
        _kernels.use_backend(prev)
    for a, b in zip(outs["python"], outs["cython"]):
        np.testing.assert_allclose(a, b, atol=1e-13)


def test_parameter_gradients(backend, rng):
    raw = ad.parameter(rng.normal(size=(6, 23)))
    x = ad.parameter(rng.uniform(0.05, 0.95, 6))

    def fn():
        w, h, d = raw_to_params(raw, 8)
        return ad.sum(ad.square(rq_spline(x, w, h, d)))

    assert ad.finite_diff_check(fn, [raw, x]) < 1e-4


def test_min_bin_floor(rng):
    w, h, d = raw_to_arrays(np.array([[50.0] + [-50.0] * 7 + [0.0] * 8 + [-40.0] * 7]))
    assert w.min() >= MIN_BIN and h.min() >= MIN_BIN and d.min() > 0


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 23, elements=st.floats(-4, 4)), st.floats(0, 1), st.floats(0, 1))
def test_monotone_property(raw, a, b):
    p = SplineParams.from_raw(raw)
    lo, hi = min(a, b), max(a, b)
    ya, yb = spline_eval(p, [lo, hi])
    assert 0.0 <= ya <= yb <= 1.0
