import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cardlearn.encoding import (
    HASH_DIM,
    MAX_TWO_SIDED,
    ColumnNormalizer,
    NormalizerSet,
    SetEncoder,
    encode_set,
    encode_upper_bounds,
    encode_vertices,
    fit_normalizers,
    hash_slot,
    like_tokens,
)
from cardlearn.oracle import toy_schema
from cardlearn.query import AliasQuery, Predicate, Query, QueryError
from cardlearn.schema import Column, Schema, Table


def three_col_schema(hint=None):
    cols = tuple(Column(n, "numeric-integer", hint) for n in ("a", "b", "c"))
    return Schema((Table("T", cols, 10),), ())


def aq(*preds):
    return AliasQuery.build("T", [Predicate("t", c, op, v) for c, op, v in preds])


def norms(lo=1, hi=5):
    return NormalizerSet({("T", c): ColumnNormalizer(lo, hi) for c in "abc"})


def test_literal_range_normalizer():
    s = three_col_schema()
    wl = [Query({"t": "T"}, (), (Predicate("t", "a", "le", v),)) for v in (3, 7, 5)]
    n = fit_normalizers(s, wl).get("T", "a")
    assert (n.lo, n.hi) == (3, 7)
    assert n.normalize(7) == 1.0


def test_hint_widens_literal_range():
    s = three_col_schema(hint=(0, 100))
    wl = [Query({"t": "T"}, (), (Predicate("t", "a", "le", v),)) for v in (3, 7)]
    n = fit_normalizers(s, wl).get("T", "a")
    assert (n.lo, n.hi) == (0, 100)


def test_degenerate_normalizers():
    s = three_col_schema()
    n = fit_normalizers(s, [Query({"t": "T"}, (), (Predicate("t", "a", "eq", 4),))])
    assert (n.get("T", "a").lo, n.get("T", "a").hi) == (4, 5)
    assert (n.get("T", "b").lo, n.get("T", "b").hi) == (0, 1)
    assert n.get("T", "a").normalize(-10) == 0.0


def test_normalizer_round_trip():
    n = norms()
    assert NormalizerSet.from_dict(n.to_dict()) == n


def test_unconstrained_is_full_corner():
    boxes = encode_upper_bounds(aq(), ["a", "b", "c"], norms())
    assert len(boxes) == 1
    np.testing.assert_array_equal(boxes[0].upper, [1, 1, 1])
    assert not boxes[0].two_sided.any()


def test_upper_bound_example():
    (box,) = encode_upper_bounds(aq(("a", "le", 2)), ["a", "b", "c"], norms())
    np.testing.assert_allclose(box.upper, [0.25, 1, 1])


def test_equality_is_difference_of_cdfs():
    (box,) = encode_upper_bounds(aq(("a", "eq", 2)), ["a", "b", "c"], norms())
    # P(a <= 2) - P(a <= 1): upper 0.25, lower at normalized 1 == 0, which drops out
    np.testing.assert_allclose(box.upper, [0.25, 1, 1])
    assert not box.two_sided.any()
    (box,) = encode_upper_bounds(aq(("a", "eq", 3)), ["a", "b", "c"], norms())
    pts, signs = box.vertices()
    np.testing.assert_allclose(pts, [[0.5, 1, 1], [0.25, 1, 1]])
    np.testing.assert_array_equal(signs, [1, -1])


def test_contradiction_is_empty():
    assert encode_upper_bounds(aq(("a", "le", 2), ("a", "gt", 3)), ["a", "b", "c"], norms()) == []
    pts, signs = encode_vertices(aq(("a", "lt", 1)), ["a", "b", "c"], norms())
    assert pts.shape == (0, 3) and signs.size == 0


def test_in_list_splits_into_boxes():
    boxes = encode_upper_bounds(aq(("a", "in", [2, 4, 5])), ["a", "b", "c"], norms())
    # 4 and 5 are separate unit cells; each is its own box
    assert len(boxes) == 3


def test_vertex_cap():
    many = Schema((Table("T", tuple(Column(f"c{i}", "numeric-integer") for i in range(13)), 5),), ())
    n = NormalizerSet({("T", f"c{i}"): ColumnNormalizer(0, 10) for i in range(13)})
    q = AliasQuery.build("T", [Predicate("t", f"c{i}", "gt", 2) for i in range(MAX_TWO_SIDED + 1)] + [Predicate("t", f"c{i}", "le", 8) for i in range(13)])
    (box,) = encode_upper_bounds(q, [f"c{i}" for i in range(13)], n)
    with pytest.raises(QueryError):
        box.vertices()


def _toy_encoder():
    s = toy_schema()
    n = fit_normalizers(s, [])
    return s, n, SetEncoder(s, "A", n)


def test_set_encoding_shapes():
    s, n, enc = _toy_encoder()
    two = AliasQuery.build("A", [Predicate("q", "a", "gt", 1), Predicate("q", "a", "le", 4)])
    assert enc.encode(two).shape == (2, enc.width)
    empty = enc.encode(AliasQuery("A"))
    assert empty.shape == (1, enc.width) and empty[0, -1] == 1.0
    np.testing.assert_array_equal(encode_set(s, two, n), enc.encode(two))


def _string_encoder():
    t = Table("S", (Column("c", "categorical", 50), Column("s", "string")), 5)
    s = Schema((t,), ())
    return SetEncoder(s, "S", fit_normalizers(s, []))


def test_in_list_is_one_bag_feature():
    enc = _string_encoder()
    f = enc.encode(AliasQuery.build("S", [Predicate("q", "c", "in", ["v1", "v2", "v3"])]))
    assert f.shape == (1, enc.width)
    hashed = f[0, enc._hash_off : enc._hash_off + enc.hash_dim]
    assert hashed.sum() == 3.0
    g = enc.encode(AliasQuery.build("S", [Predicate("q", "c", "in", ["v3", "v1", "v2"])]))
    np.testing.assert_array_equal(f, g)


def test_like_feature_deterministic():
    enc = _string_encoder()
    f1 = enc.encode(AliasQuery.build("S", [Predicate("q", "s", "like", "%ab%")]))
    f2 = enc.encode(AliasQuery.build("S", [Predicate("q", "s", "like", "%ab%")]))
    f3 = enc.encode(AliasQuery.build("S", [Predicate("q", "s", "like", "ab%")]))
    np.testing.assert_array_equal(f1, f2)
    assert not np.array_equal(f1, f3)
    assert like_tokens("%ab%") == ["shape:%s%", "seg:ab"]
    assert like_tokens("abcd%") == ["shape:s%", "tri:abc", "tri:bcd"]


def test_hash_slots_spread():
    rng = np.random.default_rng(0)
    lits = {"".join(rng.choice(list("abcdefghijklmnop"), size=8)) for _ in range(1000)}
    slots = np.array([hash_slot(x) for x in lits])
    occupancy = np.bincount(slots, minlength=HASH_DIM) / len(lits)
    assert occupancy.max() < 0.5
    assert all(hash_slot(x) == hash_slot(x) for x in list(lits)[:50])
    # and close to uniform: chi-square below the 0.999 quantile for 63 dof (103.4)
    expected = len(lits) / HASH_DIM
    counts = np.bincount(slots, minlength=HASH_DIM)
    assert ((counts - expected) ** 2 / expected).sum() < 103.4


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from(["le", "lt", "gt", "ge", "eq"]), st.integers(-3, 9)), max_size=5))
def test_values_in_unit_cube_and_pure(preds):
    q = aq(*preds)
    pts, signs = encode_vertices(q, ["a", "b", "c"], norms())
    assert np.all((pts >= 0) & (pts <= 1))
    assert set(np.unique(signs)) <= {-1.0, 1.0}
    pts2, signs2 = encode_vertices(q, ["a", "b", "c"], norms())
    np.testing.assert_array_equal(pts, pts2)
    np.testing.assert_array_equal(signs, signs2)
