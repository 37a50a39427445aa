"""IDX ingestion, the synthetic prototype dataset, and stratified subsampling."""

from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATA_ROOT_ENV = "ACOLGAR_DATA_ROOT"


class IdxError(ValueError):
    """Base class for IDX load failures."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatch(IdxError):
    pass


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # m × c × h × w, float64 in [0, 1]
    labels: Optional[np.ndarray]
    name: str = ""
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be m×c×h×w, got {self.images.shape}")
        if self.labels is not None and len(self.labels) != len(self.images):
            raise ValueError("labels and images disagree on example count")
        self.images.setflags(write=False)

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def unlabeled(self) -> "UnlabeledView":
        return UnlabeledView(self.images, self.name)


class UnlabeledView:
    """Trainer-facing view: images only. There is deliberately no label accessor."""

    __slots__ = ("images", "name")
    exposes_labels = False

    def __init__(self, images: np.ndarray, name: str = ""):
        self.images = images
        self.name = name

    def __len__(self):
        return len(self.images)


def data_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))


# ---------------------------------------------------------------- IDX

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse a big-endian IDX file of unsigned bytes (magic 0x0801 or 0x0803)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file ends at byte {len(raw)} before the 4-byte magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise IdxMagicError(f"{path}: bad magic 0x{magic:08x} at byte offset 0")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: header needs {header} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = header + int(np.prod(dims))
    if len(raw) < need:
        raise IdxTruncatedError(f"{path}: payload truncated at byte offset {len(raw)}, expected {need} bytes")
    if len(raw) > need:
        raise IdxCountMismatch(f"{path}: {len(raw) - need} trailing bytes after offset {need}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise TypeError("write_idx stores unsigned bytes only")
    if arr.ndim not in (1, 3):
        raise ValueError("IDX labels are 1-D and images 3-D")
    magic = IDX_LABELS_MAGIC if arr.ndim == 1 else IDX_IMAGES_MAGIC
    payload = struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def load_idx(images_path, labels_path=None, name: str = "", split: str = "train") -> Dataset:
    imgs = read_idx(images_path)
    if imgs.ndim != 3:
        raise IdxMagicError(f"{images_path}: expected a 3-D image file (magic 0x00000803), got {imgs.ndim}-D")
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path)
        if labels.ndim != 1:
            raise IdxMagicError(f"{labels_path}: expected a 1-D label file (magic 0x00000801)")
        if len(labels) != len(imgs):
            raise IdxCountMismatch(
                f"{labels_path}: label count {len(labels)} (header bytes 4..8) != image count {len(imgs)}"
            )
        labels = labels.astype(np.int64)
    images = (imgs.astype(np.float64) / 255.0)[:, None, :, :]
    return Dataset(images=images, labels=labels, name=name, split=split)


def idx_header(path) -> tuple[int, ...]:
    """Dimensions from the header only (cheap check on big files)."""
    with _open(path) as fh:
        head = fh.read(4)
        (magic,) = struct.unpack(">I", head)
        if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
            raise IdxMagicError(f"{path}: bad magic 0x{magic:08x} at byte offset 0")
        ndim = magic & 0xFF
        return struct.unpack(f">{ndim}I", fh.read(4 * ndim))


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- USPS conversion

def convert_usps(text_path, out_images, out_labels) -> dict:
    """Convert USPS from its LIBSVM text form (``label idx:value ...`` with
    values in [-1, 1] and labels 1..10) to an IDX image/label pair.

    Returns the example count and sha256 checksums of both outputs.
    """
    rows, labels = [], []
    with _open(text_path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.decode().split()
            if not parts:
                continue
            pix = np.full(256, -1.0)
            for item in parts[1:]:
                k, v = item.split(":")
                k = int(k)
                if not 1 <= k <= 256:
                    raise IdxError(f"{text_path}:{lineno}: feature index {k} outside 1..256")
                pix[k - 1] = float(v)
            rows.append(pix)
            labels.append(int(float(parts[0])) - 1)
    pixels = np.clip(np.rint((np.array(rows) + 1.0) * 127.5), 0, 255).astype(np.uint8)
    lab = np.array(labels)
    if lab.min() < 0 or lab.max() > 9:
        raise IdxError(f"{text_path}: labels must be 1..10")
    write_idx(out_images, pixels.reshape(-1, 16, 16))
    write_idx(out_labels, lab.astype(np.uint8))
    return {"count": len(lab), "images_sha256": sha256(out_images), "labels_sha256": sha256(out_labels)}


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SyntheticSpec:
    """Random binary prototypes plus clipped Gaussian noise.

    ``density`` is the fraction of lit prototype cells, ``block`` the cell
    edge in pixels (1 gives per-pixel noise patterns, larger values give
    blocky shapes), and ``max_shift`` an optional per-sample circular
    translation jitter (0 disables it).
    """

    classes: int = 4
    size: int = 16
    samples_per_class: int = 250
    noise: float = 0.3
    prototype_seed: int = 0
    density: float = 0.3
    block: int = 1
    max_shift: int = 0
    min_asymmetry: float = 0.10

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("synthetic data needs at least 2 classes")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.block < 1 or self.size % self.block:
            raise ValueError("block must be a positive divisor of size")


def rotation_asymmetry(proto: np.ndarray) -> float:
    """Fraction of pixels that change under a 180° rotation."""
    return float(np.mean(proto != np.rot90(proto, 2, axes=(-2, -1))))


def make_prototypes(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.prototype_seed)
    cells = spec.size // spec.block
    protos = []
    while len(protos) < spec.classes:
        p = (rng.random((cells, cells)) < spec.density).astype(np.float64)
        p = np.kron(p, np.ones((spec.block, spec.block)))
        # reject 180°-symmetric draws and exact duplicates
        if rotation_asymmetry(p) < spec.min_asymmetry:
            continue
        if any(np.array_equal(p, q) for q in protos):
            continue
        protos.append(p)
    return np.stack(protos)


def make_synthetic(spec: SyntheticSpec, rng: np.random.Generator, split: str = "train") -> Dataset:
    protos = make_prototypes(spec)
    labels = np.repeat(np.arange(spec.classes), spec.samples_per_class)
    imgs = protos[labels].copy()
    if spec.max_shift:
        shifts = rng.integers(-spec.max_shift, spec.max_shift + 1, size=(len(labels), 2))
        for i, (dy, dx) in enumerate(shifts):
            imgs[i] = np.roll(imgs[i], (dy, dx), axis=(0, 1))
    if spec.noise > 0:
        imgs = np.clip(imgs + rng.normal(0.0, spec.noise, size=imgs.shape), 0.0, 1.0)
    return Dataset(images=imgs[:, None, :, :], labels=labels, name="synthetic", split=split)


# ---------------------------------------------------------------- subsampling

def subsample(d: Dataset, m: int, seed: int) -> Dataset:
    """Class-stratified subset of size ``m`` (plain random if unlabeled)."""
    n = len(d)
    if m > n:
        raise ValueError(f"cannot subsample {m} from {n} examples")
    rng = np.random.default_rng(seed)
    if d.labels is None:
        idx = np.sort(rng.choice(n, size=m, replace=False))
    else:
        classes, counts = np.unique(d.labels, return_counts=True)
        quota = np.floor(counts * m / n).astype(int)
        # hand out the remainder to the largest fractional parts, ties by class order
        rem = m - quota.sum()
        frac = counts * m / n - quota
        for c in np.argsort(-frac, kind="stable")[:rem]:
            quota[c] += 1
        picks = []
        for c, q in zip(classes, quota):
            members = np.flatnonzero(d.labels == c)
            picks.append(rng.choice(members, size=q, replace=False))
        idx = np.sort(np.concatenate(picks))
    return Dataset(
        images=d.images[idx],
        labels=None if d.labels is None else d.labels[idx],
        name=d.name,
        split=d.split,
    )
