import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cardlearn import autodiff as ad
from cardlearn.cardest import (
    ArCdfModel,
    SetRegressorModel,
    arcdf_cdf,
    arcdf_selectivity,
    build_cardest,
    made_masks,
    set_regressor_estimate,
)
from cardlearn.encoding import ColumnNormalizer, NormalizerSet, SetEncoder, fit_normalizers
from cardlearn.query import AliasQuery, Predicate
from cardlearn.schema import Column, Schema, Table

COLS = ["a", "b", "c"]


def norms(hi=10):
    return NormalizerSet({("T", c): ColumnNormalizer(0, hi) for c in COLS})


def model(seed=0, scramble=True, cols=COLS):
    m = ArCdfModel("T", 1000, cols, norms(), bins=6, hidden=(16, 16), seed=seed)
    if scramble:
        # move away from the identity start so the checks see a non-trivial CDF
        rng = np.random.default_rng(seed + 100)
        for p in m.parameters():
            p.data += rng.normal(0, 0.4, p.data.shape)
    return m


def q(*preds):
    return AliasQuery.build("T", [Predicate("t", c, op, v) for c, op, v in preds])


def test_untrained_is_near_independent_uniform():
    m = model(scramble=False)
    x = np.array([[0.3, 0.5, 0.9], [1.0, 1.0, 1.0], [0.2, 0.2, 0.2]])
    np.testing.assert_allclose(arcdf_cdf(m, x), x.prod(axis=1), atol=5e-3)
    # with the output layer silenced only the identity bias remains
    m.params["w2"].data[:] = 0.0
    np.testing.assert_allclose(arcdf_cdf(m, x), x.prod(axis=1), atol=1e-12)


def test_cdf_corners():
    m = model()
    assert arcdf_cdf(m, np.ones(3)) == pytest.approx(1.0, abs=1e-12)
    rng = np.random.default_rng(0)
    for i in range(3):
        x = rng.uniform(size=3)
        x[i] = 0.0
        assert arcdf_cdf(m, x) == 0.0


def test_cdf_monotone_in_last_attribute():
    m = model()
    grid = np.linspace(0, 1, 400)
    for prefix in np.random.default_rng(1).uniform(size=(5, 2)):
        pts = np.column_stack([np.tile(prefix, (grid.size, 1)), grid])
        assert np.all(np.diff(arcdf_cdf(m, pts)) >= 0)


def test_full_domain_selectivity():
    m = model()
    assert arcdf_selectivity(m, q()) == pytest.approx(1.0, abs=1e-12)
    with ad.no_grad():
        assert m.cardinality([q()]).data[0] == pytest.approx(1000.0)


def test_mask_non_leakage():
    m = model()
    rng = np.random.default_rng(2)
    base = rng.uniform(size=3)
    ref = m.spline_params(base)
    for i in range(3):
        for j in range(i, 3):
            moved = base.copy()
            moved[j] = rng.uniform()
            got = m.spline_params(moved)
            np.testing.assert_array_equal(got[i].widths, ref[i].widths)
            np.testing.assert_array_equal(got[i].heights, ref[i].heights)
            np.testing.assert_array_equal(got[i].derivs, ref[i].derivs)


def test_made_mask_degrees():
    masks = made_masks(3, (5, 5), 2)
    reach = masks[0]
    for m in masks[1:]:
        reach = (reach @ m > 0).astype(float)
    # output block i must depend only on inputs < i
    for i in range(3):
        block = reach[:, 2 * i : 2 * i + 2]
        assert np.all(block[i:] == 0)


def _vertex_oracle(m, lo, hi):
    """P(lo < X <= hi) via the four corners written out by hand."""
    (la, lb), (ua, ub) = lo, hi
    F = lambda a, b: arcdf_cdf(m, np.array([a, b]))
    return F(ua, ub) - F(la, ub) - F(ua, lb) + F(la, lb)


def test_two_dim_vertices_match_hand_enumeration():
    m = model(cols=["a", "b"])
    for la, ua, lb, ub in [(2, 7, 1, 4), (0, 3, 5, 10), (4, 9, 2, 3)]:
        got = arcdf_selectivity(m, q(("a", "gt", la), ("a", "le", ua), ("b", "gt", lb), ("b", "le", ub)))
        want = _vertex_oracle(m, (la / 10, lb / 10), (ua / 10, ub / 10))
        assert got == pytest.approx(want, abs=1e-12)


def test_equality_predicate():
    m = model()
    s = arcdf_selectivity(m, q(("a", "eq", 4)))
    F = lambda a: arcdf_cdf(m, np.array([a, 1.0, 1.0]))
    assert s == pytest.approx(F(0.4) - F(0.3), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10), st.integers(0, 10), st.integers(0, 10), st.integers(0, 10), st.integers(0, 10))
def test_split_additivity(a, b, c, lo2, hi2):
    l, mid, u = sorted((a, b, c))
    m = _ADD_MODEL
    other = [("b", "gt", min(lo2, hi2)), ("b", "le", max(lo2, hi2))]
    whole = arcdf_selectivity(m, q(("a", "gt", l), ("a", "le", u), *other))
    left = arcdf_selectivity(m, q(("a", "gt", l), ("a", "le", mid), *other))
    right = arcdf_selectivity(m, q(("a", "gt", mid), ("a", "le", u), *other))
    assert whole == pytest.approx(left + right, abs=1e-9)


_ADD_MODEL = model(seed=7)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=2), st.floats(0, 1), st.floats(0, 1))
def test_cdf_monotone_in_last_coordinate_property(prefix, u, v):
    lo, hi = sorted((u, v))
    F = lambda t: arcdf_cdf(_ADD_MODEL, np.array([*prefix, t]))
    assert F(hi) >= F(lo)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10), st.integers(0, 10), st.integers(0, 9))
def test_monotone_in_last_upper_bound(ua, ub_b, uc):
    # other dimensions upper-bounded only: the selectivity is a single CDF vertex
    pre = [("a", "le", ua), ("b", "le", ub_b)]
    s1 = arcdf_selectivity(_ADD_MODEL, q(*pre, ("c", "le", uc)))
    s2 = arcdf_selectivity(_ADD_MODEL, q(*pre, ("c", "le", uc + 1)))
    assert s2 >= s1


def test_empty_predicate_set_is_zero():
    assert arcdf_selectivity(model(), q(("a", "le", 3), ("a", "gt", 5))) == 0.0


def test_in_list_is_union_of_cells():
    m = model()
    s = arcdf_selectivity(m, q(("a", "in", [2, 5, 6])))
    parts = [arcdf_selectivity(m, q(("a", "eq", v))) for v in (2, 5, 6)]
    assert s == pytest.approx(sum(parts), abs=1e-12)


def test_selectivity_gradient():
    m = model(seed=3)
    queries = [q(("a", "gt", 2), ("a", "le", 7), ("c", "le", 4)), q(("b", "eq", 5)), q()]
    fn = lambda: ad.sum(ad.square(ad.sub(m.selectivity(queries), 0.3)))
    rng = np.random.default_rng(0)
    params = m.parameters()
    coords = [(i, int(rng.integers(params[i].data.size))) for i in rng.integers(len(params), size=20)]
    assert ad.finite_diff_check(fn, params, coords=coords) < 1e-4


# ---------------------------------------------------------------------------
# set regressor
# ---------------------------------------------------------------------------


def mixed_table():
    t = Table("M", (Column("n", "numeric-integer", (0, 20)), Column("c", "categorical", 6), Column("s", "string")), 100)
    s = Schema((t,), ())
    return s, fit_normalizers(s, [])


def test_set_regressor_permutation_invariant():
    s, n = mixed_table()
    m = SetRegressorModel("M", 100, SetEncoder(s, "M", n), hidden=16, seed=1)
    preds = [Predicate("m", "n", "gt", 3), Predicate("m", "c", "in", ["v1", "v2"]), Predicate("m", "s", "like", "ab%")]
    a = AliasQuery("M", tuple((p.column, p.op, p.value) for p in preds))
    b = AliasQuery("M", tuple((p.column, p.op, p.value) for p in reversed(preds)))
    assert set_regressor_estimate(m, a) == pytest.approx(set_regressor_estimate(m, b), abs=1e-15)
    assert 0.0 < set_regressor_estimate(m, AliasQuery("M")) < 1.0


def test_build_cardest_selects_kind():
    s, n = mixed_table()
    assert build_cardest(s, "M", n).kind == "set"
    with pytest.raises(ValueError):
        build_cardest(s, "M", n, kind="arcdf")
    num = Schema((Table("T", tuple(Column(c, "numeric-integer", (0, 10)) for c in COLS), 10),), ())
    assert build_cardest(num, "T", fit_normalizers(num, [])).kind == "arcdf"
    assert build_cardest(num, "T", fit_normalizers(num, []), kind="set").kind == "set"


def test_zero_column_table():
    m = ArCdfModel("T", 7, [], norms())
    assert arcdf_selectivity(m, AliasQuery("T")) == 1.0


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["set", "arcdf"])
def test_single_table_training_accuracy(kind):
    from cardlearn.bundle import ModelBundle, ModelConfig
    from cardlearn.composer import Estimator
    from cardlearn.evaluator import qerrors
    from cardlearn.experiments import desk_train_config
    from cardlearn.oracle import GenConfig, TableGen, generate_dataset
    from cardlearn.schema import JoinTemplate
    from cardlearn.trainer import fit
    from cardlearn.workload import WorkloadSpec, generate_workload

    t = Table("R", (Column("r1", "numeric-integer", (0, 50)), Column("r2", "numeric-integer", (0, 20))), 3000)
    s = Schema((t,), ())
    ds = generate_dataset(s, GenConfig(tables={"R": TableGen(correlation={"r1": 0.8})}, default_correlation=0.5), seed=0)
    spec = WorkloadSpec((JoinTemplate(("R",)),), 5000)
    train = generate_workload(ds, spec, seed=0)
    test = generate_workload(ds, WorkloadSpec((JoinTemplate(("R",)),), 500), seed=1)
    bundle = ModelBundle.build(s, fit_normalizers(s, train), ModelConfig(cardest_kind=kind, n_h=32))
    fit(bundle, train, desk_train_config(0, max_epochs=30))
    est, _ = Estimator(s, bundle).estimate_many([lq.query for lq in test])
    qe, _ = qerrors(est, [lq.cardinality for lq in test])
    assert np.median(qe) <= 2.0
