"""Latent extraction, k-means, and unsupervised clustering accuracy."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .acol import acol_forward
from .gar import GarConfig
from .layers import Network
from .tensor import Tensor

TAPS = ("latent", "presoftmax", "softmax")
LATENT_MAGIC = b"ACOLLAT1"


class TapError(ValueError):
    pass


def extract_latent(net: Network, x: np.ndarray, tap: str = "latent", batch_size: int = 500) -> np.ndarray:
    """Eval-mode forward pass; returns F (default), Z, or softmax(Z) rows."""
    if tap not in TAPS:
        raise TapError(f"unknown tap {tap!r}; choose one of {TAPS}")
    cfg = GarConfig(n_p=net.spec.n_p, k_s=net.spec.k_s)
    chunks = []
    for start in range(0, len(x), batch_size):
        f, _ = net.forward_latent(Tensor(x[start:start + batch_size]), training=False)
        if tap == "latent":
            chunks.append(f.data)
            continue
        acts = acol_forward(f, net.acol_dense, cfg)
        chunks.append(acts.Z.data if tap == "presoftmax" else acts.S.data)
    out = np.concatenate(chunks, axis=0)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite values in extracted representation")
    return out


# ---------------------------------------------------------------- k-means

@dataclass
class KmeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    best_restart: int
    n_iter: int


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = len(x)
    centers = [x[rng.integers(m)]]
    closest = ((x - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(m)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, m - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, ((x - x[idx]) ** 2).sum(1))
    return np.array(centers, dtype=np.float64)


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300, history: Optional[list] = None):
    k = len(centers)
    assign = None
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centers)
        new = d.argmin(axis=1)
        if history is not None:
            history.append(float(d[np.arange(len(x)), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            members = assign == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point farthest from its centre
                far = int(d[np.arange(len(x)), assign].argmax())
                centers[j] = x[far]
                assign[far] = j
                d[far] = 0.0
    inertia = float(((x - centers[assign]) ** 2).sum())
    return centers, assign, inertia, it


def kmeans(points: np.ndarray, k: int, restarts: int = 10, seed: int = 0, max_iter: int = 300) -> KmeansResult:
    x = np.asarray(points, dtype=np.float64)
    m = len(x)
    if not 1 <= k <= m:
        raise ValueError(f"k-means needs 1 <= k <= m, got k={k}, m={m}")
    rng = np.random.default_rng(seed)
    best: Optional[KmeansResult] = None
    for r in range(restarts):
        centers, assign, inertia, n_iter = lloyd(x, kmeans_pp_init(x, k, rng), max_iter)
        if best is None or inertia < best.inertia:
            best = KmeansResult(centers, assign, inertia, r, n_iter)
    return best


# ---------------------------------------------------------------- accuracy

@dataclass
class ClusterReport:
    acc: float
    k: int
    mapping: dict  # cluster -> class, only for matched clusters
    contingency: list
    assignments: list
    inertia: Optional[float] = None
    seed: Optional[int] = None

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("assignments")
        d["mapping"] = {str(k): v for k, v in self.mapping.items()}
        return json.dumps(d, indent=2, sort_keys=True)


def contingency_table(assignments: np.ndarray, truth: np.ndarray, k: int, n_classes: int) -> np.ndarray:
    a = np.asarray(assignments)
    t = np.asarray(truth)
    if a.shape != t.shape:
        raise ValueError("assignments and truth must have the same length")
    if len(a) == 0:
        raise ValueError("empty label vectors")
    if a.min() < 0 or a.max() >= k:
        raise ValueError(f"cluster index outside [0, {k})")
    if t.min() < 0 or t.max() >= n_classes:
        raise ValueError(f"class label outside [0, {n_classes})")
    table = np.zeros((k, n_classes), dtype=np.int64)
    np.add.at(table, (a, t), 1)
    return table


def clustering_accuracy(assignments, truth, k: int, n_classes: int) -> ClusterReport:
    """Best one-to-one cluster→class matching (Hungarian). Unmatched clusters count as errors."""
    table = contingency_table(assignments, truth, k, n_classes)
    rows, cols = linear_sum_assignment(-table)
    matched = int(table[rows, cols].sum())
    mapping = {int(r): int(c) for r, c in zip(rows, cols)}
    return ClusterReport(
        acc=matched / len(np.asarray(truth)),
        k=k,
        mapping=mapping,
        contingency=table.tolist(),
        assignments=np.asarray(assignments).tolist(),
    )


# ---------------------------------------------------------------- projection / export

def project_2d(points: np.ndarray) -> np.ndarray:
    """Centered PCA projection onto the top two principal directions."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError(f"project_2d needs m×d with d >= 2, got {x.shape}")
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    return xc @ vt[:2].T


def write_matrix(path, mat: np.ndarray) -> None:
    mat = np.ascontiguousarray(mat, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(LATENT_MAGIC)
        fh.write(struct.pack("<QQ", *mat.shape))
        fh.write(mat.tobytes())


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != LATENT_MAGIC:
        raise ValueError(f"{path}: not a latent matrix file")
    rows, cols = struct.unpack("<QQ", raw[8:24])
    if len(raw) != 24 + 8 * rows * cols:
        raise ValueError(f"{path}: truncated matrix payload")
    return np.frombuffer(raw, dtype="<f8", offset=24).reshape(rows, cols).copy()
