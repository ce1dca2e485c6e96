import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cardlearn import autodiff as ad


def test_softmax_symmetry():
    np.testing.assert_allclose(ad.softmax(ad.Tensor(np.zeros((1, 2)))).data, [[0.5, 0.5]])


def test_matmul_identity(rng):
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(ad.matmul(np.eye(4), x).data, x)


def test_softplus_at_zero():
    assert ad.softplus(ad.Tensor(np.zeros(1))).data[0] == pytest.approx(math.log(2), abs=1e-15)


def test_sum_gives_ones_gradient():
    x = ad.parameter(np.arange(6.0).reshape(2, 3))
    with ad.Tape() as tape:
        loss = ad.sum(x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_squared_log_ratio_minimum_has_zero_gradient():
    c = 7.0
    est = ad.parameter(np.array([c]))
    with ad.Tape() as tape:
        loss = ad.sum(ad.square(ad.sub(ad.log(est), math.log(c))))
    tape.backward(loss)
    assert est.grad[0] == 0.0


def test_backward_twice_raises():
    x = ad.parameter(np.ones(2))
    with ad.Tape() as tape:
        loss = ad.sum(ad.mul(x, x))
    tape.backward(loss)
    with pytest.raises(ad.TapeError):
        tape.backward(loss)
    tape.reset()


def test_backward_needs_scalar():
    x = ad.parameter(np.ones(3))
    with ad.Tape() as tape:
        y = ad.mul(x, 2.0)
    with pytest.raises(Exception):
        tape.backward(y)


def test_no_grad_records_nothing():
    x = ad.parameter(np.ones(2))
    with ad.Tape() as tape:
        with ad.no_grad():
            y = ad.sum(ad.exp(x))
    assert tape.nodes == []
    assert y.item() == pytest.approx(2 * math.e)


def test_linear_function_check_exact(rng):
    w = ad.parameter(rng.normal(size=(3, 2)))
    x = rng.normal(size=(5, 3))
    fn = lambda: ad.sum(ad.matmul(x, w))
    assert ad.finite_diff_check(fn, [w]) < 1e-9


def test_random_five_parameter_graph(rng):
    p = [ad.parameter(rng.normal(size=s)) for s in [(3, 4), (4,), (4, 2), (2,), (1,)]]
    x = rng.normal(size=(6, 3))

    def fn():
        h = ad.tanh(ad.linear(x, p[0], p[1]))
        z = ad.softmax(ad.linear(h, p[2], p[3]))
        z0 = ad.reshape(ad.take_cols(z, 0, 1), (6,))
        s = ad.add(ad.mul(z0, ad.exp(p[4])), ad.reshape(ad.softplus(ad.take_cols(h, 0, 1)), (6,)))
        return ad.mean(ad.square(ad.sub(ad.log(ad.add(s, 1.0)), 0.3)))

    assert ad.finite_diff_check(fn, p, eps=1e-5) < 1e-4


def test_composites_gradient(rng):
    a = ad.parameter(rng.uniform(0.5, 1.5, size=(4, 3)))
    idx = np.array([0, 2, 2, 3, 1])
    seg = np.array([0, 0, 1, 2, 2])
    w = np.array([1.0, -1.0, 0.5, 2.0, 1.0])

    def fn():
        g = ad.gather(a, idx)  # (5, 3)
        s = ad.segment_sum(g, seg, 3, weights=w)  # (3, 3)
        r = ad.prod_rows(s)
        m = ad.where(r.data > 0, r, ad.neg(r))
        return ad.sum(ad.div(ad.concat([m, ad.sigmoid(ad.reshape(s, (9,)))]), 3.0))

    assert ad.finite_diff_check(fn, [a]) < 1e-6


def test_prod_rows_with_zero_entry():
    a = ad.parameter(np.array([[2.0, 0.0, 3.0], [1.0, 2.0, 4.0]]))
    with ad.Tape() as tape:
        loss = ad.sum(ad.prod_rows(a))
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, [[0.0, 6.0, 0.0], [8.0, 4.0, 2.0]])


def test_masked_linear_respects_mask(rng):
    x = ad.parameter(rng.normal(size=(2, 3)))
    w = ad.parameter(rng.normal(size=(3, 2)))
    mask = np.array([[1, 0], [0, 1], [0, 0]], dtype=float)
    with ad.Tape() as tape:
        loss = ad.sum(ad.masked_linear(x, w, ad.parameter(np.zeros(2)), mask))
    tape.backward(loss)
    assert np.all(w.grad[2] == 0) and w.grad[0, 1] == 0 and w.grad[1, 0] == 0
    assert np.all(x.grad[:, 2] == 0)


def test_errors():
    with pytest.raises(ZeroDivisionError):
        ad.div(ad.Tensor(np.ones(2)), ad.Tensor(np.array([1.0, 0.0])))
    with pytest.raises(ValueError):
        ad.log(ad.Tensor(np.array([1.0, -1.0])))
    with pytest.raises(ad.ShapeError):
        ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((3, 2))))


finite = st.floats(-30, 30, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)), elements=finite))
def test_softmax_sums_to_one(x):
    s = ad.softmax(ad.Tensor(x)).data
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(s >= 0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-700, 30, allow_nan=False)))
def test_softplus_positive(x):
    assert np.all(ad.softplus(ad.Tensor(x)).data > 0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-3, 3)), arrays(np.float64, (4,), elements=st.floats(-3, 3)))
def test_sigmoid_tanh_gradients(xv, bv):
    x = ad.parameter(xv.copy())
    b = ad.parameter(bv.copy())
    fn = lambda: ad.sum(ad.mul(ad.sigmoid(ad.add(x, b)), ad.tanh(x)))
    assert ad.finite_diff_check(fn, [x, b], floor=1e-6) < 1e-5
