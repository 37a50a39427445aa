"""Image transformations that define pseudo parent-classes, and the per-epoch
pseudo-labelling of a dataset."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class TransformConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TransformKind:
    """A named, deterministic pixel remap on c×h×w images.

    Rotations are counter-clockwise: ``out[r, c] = in[c, w-1-r]``.
    Composite ``fliph_rot*`` kinds mirror columns first, then rotate.
    """

    name: str
    flip: bool = False
    quarter_turns: int = 0
    scale: float = 0.75
    shear: float = 0.25
    shift: Optional[tuple[int, int]] = None
    perm_seed: int = 0
    _perm_cache: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __call__(self, img: np.ndarray) -> np.ndarray:
        return apply_transform(img, self)


ROTATION_NAMES = (
    "identity", "rot90", "rot180", "rot270",
    "fliph", "fliph_rot90", "fliph_rot180", "fliph_rot270",
)
TRANSFORM_NAMES = ROTATION_NAMES + ("scale", "shear", "translate", "pixperm")


def make_kind(name: str, **params) -> TransformKind:
    if name not in TRANSFORM_NAMES:
        raise TransformConfigError(f"unknown transform {name!r}; valid names: {', '.join(TRANSFORM_NAMES)}")
    if name in ROTATION_NAMES:
        idx = ROTATION_NAMES.index(name)
        return TransformKind(name, flip=idx >= 4, quarter_turns=idx % 4)
    return TransformKind(name, **params)


def _rot90_ccw(img: np.ndarray) -> np.ndarray:
    # out[r][c] = in[c][w-1-r]
    return np.rot90(img, k=1, axes=(-2, -1))


def _resample(img: np.ndarray, src_r: np.ndarray, src_c: np.ndarray) -> np.ndarray:
    """Nearest-neighbour pull from source coordinates; out-of-canvas reads are zero."""
    h, w = img.shape[-2:]
    ri = np.rint(src_r).astype(int)
    ci = np.rint(src_c).astype(int)
    valid = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
    out = np.zeros_like(img)
    out[..., valid] = img[..., ri[valid], ci[valid]]
    return out


def apply_transform(img: np.ndarray, kind: TransformKind) -> np.ndarray:
    """Apply ``kind`` to a c×h×w (or batched ...×h×w) image array. Pure."""
    h, w = img.shape[-2:]
    name = kind.name
    if name in ROTATION_NAMES:
        if kind.quarter_turns and h != w:
            raise ValueError(f"{name} needs a square image, got {h}×{w}")
        out = img[..., ::-1] if kind.flip else img
        for _ in range(kind.quarter_turns):
            out = _rot90_ccw(out)
        return np.ascontiguousarray(out)

    rr, cc = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    if name == "scale":
        return _resample(img, cy + (rr - cy) / kind.scale, cx + (cc - cx) / kind.scale)
    if name == "shear":
        return _resample(img, rr, cc - kind.shear * (rr - cy))
    if name == "translate":
        dx, dy = kind.shift if kind.shift is not None else (w // 4, 0)
        return _resample(img, rr - dy, cc - dx)
    if name == "pixperm":
        perm = kind._perm_cache.get((h, w))
        if perm is None:
            perm = np.random.default_rng(kind.perm_seed).permutation(h * w)
            kind._perm_cache[(h, w)] = perm
        flat = img.reshape(img.shape[:-2] + (h * w,))
        return np.ascontiguousarray(flat[..., perm].reshape(img.shape))
    raise TransformConfigError(f"unknown transform {name!r}")


@dataclass(frozen=True)
class TransformSet:
    kinds: tuple[TransformKind, ...]

    def __post_init__(self):
        if not self.kinds:
            raise TransformConfigError("transform set is empty")
        if self.kinds[0].name != "identity":
            raise TransformConfigError(
                f"first transform must be 'identity' (got {self.kinds[0].name!r}); valid names: {', '.join(TRANSFORM_NAMES)}"
            )

    @property
    def n_p(self) -> int:
        return len(self.kinds)

    @property
    def names(self) -> list[str]:
        return [k.name for k in self.kinds]

    def __len__(self):
        return len(self.kinds)

    def __getitem__(self, i):
        return self.kinds[i]


def parse_transform_set(names: list[str], params: Optional[dict] = None) -> TransformSet:
    """Build a set from names such as ``["identity", "rot180"]``.

    ``params`` optionally maps a name to keyword overrides (e.g. scale factor).
    """
    params = params or {}
    if not names:
        raise TransformConfigError(f"transform set is empty; valid names: {', '.join(TRANSFORM_NAMES)}")
    unknown = [n for n in names if n not in TRANSFORM_NAMES]
    if unknown:
        raise TransformConfigError(f"unknown transform(s) {unknown}; valid names: {', '.join(TRANSFORM_NAMES)}")
    if names[0] != "identity":
        raise TransformConfigError(
            f"'identity' must be the first transform (got {names}); valid names: {', '.join(TRANSFORM_NAMES)}"
        )
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise TransformConfigError(f"duplicate transform(s) {dupes}; valid names: {', '.join(TRANSFORM_NAMES)}")
    return TransformSet(tuple(make_kind(n, **params.get(n, {})) for n in names))


@dataclass
class PseudoBatch:
    x: np.ndarray  # transformed images
    t: np.ndarray  # pseudo labels in [0, n_p)
    origin: np.ndarray  # source row of each transformed image


def draw_labels(m: int, n_p: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, n_p, size=m)


def make_pseudo_batch(
    x: np.ndarray,
    tset: TransformSet,
    rng: np.random.Generator,
    labels: Optional[np.ndarray] = None,
    shuffle: bool = True,
) -> PseudoBatch:
    """Assign each example a random transformation and apply it.

    ``labels`` pins the assignment (fixed-assignment ablation mode); otherwise
    they are drawn uniformly from ``rng``.
    """
    m = len(x)
    if m == 0:
        raise ValueError("make_pseudo_batch needs at least one example")
    t = draw_labels(m, tset.n_p, rng) if labels is None else np.asarray(labels)
    xt = np.empty_like(x)
    for p, kind in enumerate(tset.kinds):
        sel = np.flatnonzero(t == p)
        if sel.size:
            xt[sel] = apply_transform(x[sel], kind)
    origin = np.arange(m)
    if shuffle:
        order = rng.permutation(m)
        xt, t, origin = xt[order], t[order], origin[order]
    return PseudoBatch(x=xt, t=t, origin=origin)
