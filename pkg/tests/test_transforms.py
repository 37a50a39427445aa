import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from acolgar.transforms import (
    ROTATION_NAMES, TRANSFORM_NAMES, TransformConfigError, TransformSet, apply_transform, make_kind,
    make_pseudo_batch, parse_transform_set,
)

images = arrays(np.float64, st.tuples(st.integers(1, 3), st.just(5), st.just(5)), elements=st.floats(0, 1))


def kind(name, **kw):
    return make_kind(name, **kw)


def test_identity_unchanged(rng):
    x = rng.random((2, 6, 6))
    assert np.array_equal(apply_transform(x, kind("identity")), x)


def test_rot180_involution(rng):
    x = rng.random((1, 7, 7))
    assert np.array_equal(apply_transform(apply_transform(x, kind("rot180")), kind("rot180")), x)


def test_rot90_index_map():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    out = apply_transform(np.array([[[a, b], [c, d]]]), kind("rot90"))
    assert out[0].tolist() == [[b, d], [a, c]]


def test_rot90_general_index_map(rng):
    x = rng.random((1, 5, 5))
    out = apply_transform(x, kind("rot90"))
    h = 5
    for r in range(h):
        for c in range(h):
            assert out[0, r, c] == x[0, c, h - 1 - r]


def test_fliph_index_map(rng):
    x = rng.random((1, 4, 4))
    assert np.array_equal(apply_transform(x, kind("fliph")), x[..., ::-1])


def test_composites_flip_then_rotate(rng):
    x = rng.random((1, 4, 4))
    for q, name in ((1, "fliph_rot90"), (2, "fliph_rot180"), (3, "fliph_rot270")):
        expect = x[..., ::-1]
        for _ in range(q):
            expect = apply_transform(expect, kind("rot90"))
        assert np.array_equal(apply_transform(x, kind(name)), expect)


@given(images)
def test_rotation_group_closure(x):
    r = x
    for _ in range(4):
        r = apply_transform(r, kind("rot90"))
    assert np.array_equal(r, x)
    f = apply_transform(apply_transform(x, kind("fliph")), kind("fliph"))
    assert np.array_equal(f, x)


def test_eight_rotation_kinds_are_distinct():
    x = np.arange(16.0).reshape(1, 4, 4)
    outs = [apply_transform(x, kind(n)).tobytes() for n in ROTATION_NAMES]
    assert len(set(outs)) == 8


def test_rotation_needs_square_image():
    with pytest.raises(ValueError):
        apply_transform(np.zeros((1, 3, 4)), kind("rot90"))
    apply_transform(np.zeros((1, 3, 4)), kind("fliph"))


def test_translate_default_shift():
    x = np.zeros((1, 8, 8))
    x[0, 3, 1] = 1.0
    out = apply_transform(x, kind("translate"))
    assert out[0, 3, 3] == 1.0 and out.sum() == 1.0  # moved right by w//4 = 2


def test_translate_zero_fills():
    out = apply_transform(np.ones((1, 8, 8)), kind("translate"))
    assert np.all(out[0, :, :2] == 0) and np.all(out[0, :, 2:] == 1)


def test_scale_shrinks_toward_center():
    x = np.ones((1, 8, 8))
    out = apply_transform(x, kind("scale"))
    assert out.sum() < x.sum()
    assert out[0, 0, 0] == 0 and out[0, 4, 4] == 1


def test_shear_keeps_center_row():
    x = np.random.default_rng(0).random((1, 9, 9))
    out = apply_transform(x, kind("shear"))
    assert np.array_equal(out[0, 4], x[0, 4])


def test_pixperm_is_fixed_and_bijective(rng):
    x = rng.random((3, 1, 6, 6))
    k = kind("pixperm", perm_seed=3)
    a, b = apply_transform(x, k), apply_transform(x, k)
    assert np.array_equal(a, b)
    assert np.array_equal(np.sort(a.reshape(3, -1), axis=1), np.sort(x.reshape(3, -1), axis=1))
    # same map for every image
    idx = np.arange(36.0).reshape(1, 1, 6, 6)
    perm = apply_transform(idx, k).ravel().astype(int)
    assert np.array_equal(a.reshape(3, -1), x.reshape(3, -1)[:, perm])


@given(images)
def test_apply_transform_is_pure(x):
    before = x.copy()
    for name in TRANSFORM_NAMES:
        apply_transform(x, kind(name))
    assert np.array_equal(x, before)


# ---------------------------------------------------------------- sets

def test_parse_rotation_subset():
    s = parse_transform_set(["identity", "rot180"])
    assert s.names == ["identity", "rot180"] and s.n_p == 2


@pytest.mark.parametrize("names,msg", [
    (["rot90"], "identity"),
    (["identity", "identity"], "duplicate"),
    (["identity", "spin"], "unknown"),
    ([], "empty"),
])
def test_parse_errors_list_valid_names(names, msg):
    with pytest.raises(TransformConfigError, match=msg) as exc:
        parse_transform_set(names)
    assert "rot180" in str(exc.value) and "pixperm" in str(exc.value)


def test_set_requires_identity_first():
    with pytest.raises(TransformConfigError):
        TransformSet((kind("rot90"), kind("identity")))


def test_parse_passes_parameters():
    s = parse_transform_set(["identity", "scale"], {"scale": {"scale": 0.5}})
    assert s[1].scale == 0.5


# ---------------------------------------------------------------- pseudo batches

def test_identity_only_set(rng):
    x = rng.random((6, 1, 4, 4))
    pb = make_pseudo_batch(x, parse_transform_set(["identity"]), rng)
    assert np.all(pb.t == 0)
    assert np.array_equal(pb.x, x[pb.origin])


def test_label_balance():
    x = np.zeros((8000, 1, 2, 2))
    pb = make_pseudo_batch(x, parse_transform_set(list(ROTATION_NAMES)), np.random.default_rng(0))
    counts = np.bincount(pb.t, minlength=8)
    assert np.all((counts >= 900) & (counts <= 1100))


def test_rows_match_their_transform(rng):
    x = rng.random((20, 1, 5, 5))
    tset = parse_transform_set(list(ROTATION_NAMES))
    pb = make_pseudo_batch(x, tset, rng)
    for row, t, o in zip(pb.x, pb.t, pb.origin):
        assert np.array_equal(row, apply_transform(x[o], tset[t]))


def test_fixed_seed_identical_batches(rng):
    x = rng.random((30, 1, 4, 4))
    tset = parse_transform_set(["identity", "rot90", "rot180"])
    a = make_pseudo_batch(x, tset, np.random.default_rng(5))
    b = make_pseudo_batch(x, tset, np.random.default_rng(5))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.t, b.t) and np.array_equal(a.origin, b.origin)


def test_batch_does_not_mutate_input(rng):
    x = rng.random((10, 1, 4, 4))
    before = x.copy()
    make_pseudo_batch(x, parse_transform_set(["identity", "rot90"]), rng)
    assert np.array_equal(x, before)


def test_consecutive_epochs_relabel():
    x = np.zeros((200, 1, 2, 2))
    tset = parse_transform_set(["identity", "rot180"])
    g = np.random.default_rng(1)
    a = make_pseudo_batch(x, tset, g, shuffle=False).t
    b = make_pseudo_batch(x, tset, g, shuffle=False).t
    assert not np.array_equal(a, b)


def test_pinned_labels(rng):
    x = rng.random((4, 1, 3, 3))
    pb = make_pseudo_batch(x, parse_transform_set(["identity", "rot180"]), rng, labels=np.array([1, 0, 1, 0]), shuffle=False)
    assert pb.t.tolist() == [1, 0, 1, 0]


def test_empty_input_rejected(rng):
    with pytest.raises(ValueError):
        make_pseudo_batch(np.zeros((0, 1, 3, 3)), parse_transform_set(["identity"]), rng)
