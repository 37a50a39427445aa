import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from acolgar.data import (
    Dataset, IdxCountMismatch, IdxError, IdxMagicError, IdxTruncatedError, SyntheticSpec, convert_usps,
    idx_header, load_idx, make_prototypes, make_synthetic, read_idx, rotation_asymmetry, subsample, write_idx,
)


def idx_pair(tmp_path, imgs, labels, suffix=""):
    ip, lp = tmp_path / f"img.idx{suffix}", tmp_path / f"lab.idx{suffix}"
    write_idx(ip, imgs)
    write_idx(lp, labels)
    return ip, lp


def test_two_image_fixture_bytes(tmp_path):
    imgs = np.array([[[0, 255], [128, 1]], [[9, 8], [7, 6]]], dtype=np.uint8)
    path = tmp_path / "x.idx"
    write_idx(path, imgs)
    raw = path.read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x03"
    assert struct.unpack(">3I", raw[4:16]) == (2, 2, 2)
    assert raw[16:] == imgs.tobytes()
    ds = load_idx(path)
    assert ds.images.shape == (2, 1, 2, 2)
    assert ds.images[0, 0, 0, 1] == 1.0 and ds.images[0, 0, 1, 0] == 128 / 255


@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_round_trip_fixtures(tmp_path, suffix):
    rng = np.random.default_rng(7)
    for i in range(50):
        m, h, w = rng.integers(1, 12), rng.integers(1, 9), rng.integers(1, 9)
        imgs = rng.integers(0, 256, size=(m, h, w), dtype=np.uint8)
        labels = rng.integers(0, 10, size=m, dtype=np.uint8)
        ip, lp = idx_pair(tmp_path, imgs, labels, suffix)
        assert np.array_equal(read_idx(ip), imgs)
        assert np.array_equal(read_idx(lp), labels)
        assert idx_header(ip) == (m, h, w)
        ds = load_idx(ip, lp)
        assert np.array_equal(np.rint(ds.images[:, 0] * 255).astype(np.uint8), imgs)
        assert np.array_equal(ds.labels, labels)


@given(arrays(np.uint8, st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5))))
def test_round_trip_property(tmp_path_factory, imgs):
    p = tmp_path_factory.mktemp("idx") / "a.idx"
    write_idx(p, imgs)
    assert np.array_equal(read_idx(p), imgs)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(b"\x00\x00\x09\x03" + bytes(12))
    with pytest.raises(IdxMagicError, match="offset 0"):
        read_idx(p)


def test_truncated_payload_reports_offset(tmp_path):
    p = tmp_path / "t.idx"
    write_idx(p, np.zeros((3, 4, 4), np.uint8))
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(IdxTruncatedError, match="offset 59"):
        read_idx(p)


def test_truncated_header(tmp_path):
    p = tmp_path / "h.idx"
    p.write_bytes(b"\x00\x00\x08\x03\x00\x00")
    with pytest.raises(IdxTruncatedError):
        read_idx(p)


def test_count_mismatch(tmp_path):
    ip, lp = idx_pair(tmp_path, np.zeros((3, 2, 2), np.uint8), np.zeros(4, np.uint8))
    with pytest.raises(IdxCountMismatch, match="4"):
        load_idx(ip, lp)


def test_label_file_as_images_rejected(tmp_path):
    p = tmp_path / "l.idx"
    write_idx(p, np.zeros(3, np.uint8))
    with pytest.raises(IdxError):
        load_idx(p)


def test_write_rejects_non_bytes(tmp_path):
    with pytest.raises(TypeError):
        write_idx(tmp_path / "f.idx", np.zeros((1, 2, 2)))


def test_normalization_is_plain_division(tmp_path):
    imgs = np.arange(256, dtype=np.uint8).reshape(1, 16, 16)
    p = tmp_path / "n.idx"
    write_idx(p, imgs)
    ds = load_idx(p)
    assert ds.images.dtype == np.float64
    assert np.array_equal(ds.images[0, 0], imgs[0] / 255.0)


def test_unlabeled_view_has_no_labels(tmp_path):
    ds = Dataset(images=np.zeros((3, 1, 2, 2)), labels=np.array([0, 1, 2]))
    view = ds.unlabeled()
    assert not hasattr(view, "labels")
    with pytest.raises(AttributeError):
        view.labels = ds.labels
    assert len(view) == 3


def test_dataset_is_read_only():
    ds = Dataset(images=np.zeros((2, 1, 2, 2)), labels=None)
    with pytest.raises(ValueError):
        ds.images[0, 0, 0, 0] = 1.0


# ---------------------------------------------------------------- synthetic

def test_noise_free_samples_equal_prototypes():
    spec = SyntheticSpec(classes=3, size=8, samples_per_class=5, noise=0.0)
    ds = make_synthetic(spec, np.random.default_rng(0))
    protos = make_prototypes(spec)
    for img, lab in zip(ds.images, ds.labels):
        assert np.array_equal(img[0], protos[lab])


def test_uniform_class_histogram():
    spec = SyntheticSpec(classes=4, size=8, samples_per_class=250)
    ds = make_synthetic(spec, np.random.default_rng(1))
    assert len(ds) == 1000
    assert np.bincount(ds.labels).tolist() == [250] * 4


@pytest.mark.parametrize("seed", range(10))
def test_prototypes_are_rotation_asymmetric(seed):
    spec = SyntheticSpec(classes=6, size=8, prototype_seed=seed)
    protos = make_prototypes(spec)
    assert all(rotation_asymmetry(p) >= 0.10 for p in protos)
    assert len({p.tobytes() for p in protos}) == 6


def test_synthetic_values_in_unit_range():
    ds = make_synthetic(SyntheticSpec(size=8, noise=1.0), np.random.default_rng(2))
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0


def test_block_prototypes_are_piecewise_constant():
    p = make_prototypes(SyntheticSpec(classes=2, size=8, block=4))[0]
    assert np.array_equal(p, np.kron(p[::4, ::4], np.ones((4, 4))))


def test_same_seed_same_data():
    spec = SyntheticSpec(size=8, samples_per_class=10, max_shift=2)
    a = make_synthetic(spec, np.random.default_rng(3))
    b = make_synthetic(spec, np.random.default_rng(3))
    assert np.array_equal(a.images, b.images)


def test_bad_synthetic_spec():
    with pytest.raises(ValueError):
        SyntheticSpec(classes=1)
    with pytest.raises(ValueError):
        SyntheticSpec(size=10, block=3)


# ---------------------------------------------------------------- subsampling

def _labelled(counts, rng):
    labels = np.concatenate([np.full(c, k) for k, c in enumerate(counts)])
    return Dataset(images=rng.random((len(labels), 1, 2, 2)), labels=labels)


def test_full_subsample_is_identity(rng):
    ds = _labelled([5, 7, 3], rng)
    sub = subsample(ds, len(ds), seed=0)
    assert np.array_equal(sub.images, ds.images) and np.array_equal(sub.labels, ds.labels)


@given(st.lists(st.integers(1, 40), min_size=2, max_size=6), st.data())
def test_stratified_counts_within_one(counts, data):
    ds = _labelled(counts, np.random.default_rng(0))
    m = data.draw(st.integers(1, len(ds)))
    sub = subsample(ds, m, seed=4)
    assert len(sub) == m
    got = np.bincount(sub.labels, minlength=len(counts))
    ideal = np.array(counts) * m / len(ds)
    assert np.all(np.abs(got - ideal) < 1.0 + 1e-9)


def test_subsample_seeded(rng):
    ds = _labelled([30, 30], rng)
    a, b, c = subsample(ds, 10, 1), subsample(ds, 10, 1), subsample(ds, 10, 2)
    assert np.array_equal(a.images, b.images)
    assert not np.array_equal(a.images, c.images)


def test_subsample_too_large(rng):
    with pytest.raises(ValueError):
        subsample(_labelled([2, 2], rng), 5, 0)


# ---------------------------------------------------------------- USPS

def test_convert_usps(tmp_path):
    src = tmp_path / "usps.txt"
    src.write_text("3 1:1 2:-1 256:0\n10 5:0.5\n")
    info = convert_usps(src, tmp_path / "i.idx", tmp_path / "l.idx")
    assert info["count"] == 2 and len(info["images_sha256"]) == 64
    imgs, labs = read_idx(tmp_path / "i.idx"), read_idx(tmp_path / "l.idx")
    assert imgs.shape == (2, 16, 16) and labs.tolist() == [2, 9]
    assert imgs[0, 0, 0] == 255 and imgs[0, 0, 1] == 0 and imgs[0, 15, 15] == 128
    assert imgs[1, 0, 4] == 191 and imgs[1, 0, 0] == 0


def test_convert_usps_bad_index(tmp_path):
    src = tmp_path / "usps.txt"
    src.write_text("1 300:1\n")
    with pytest.raises(IdxError, match="300"):
        convert_usps(src, tmp_path / "i.idx", tmp_path / "l.idx")
