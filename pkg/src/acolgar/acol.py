"""Auto-clustering output layer: k_s softmax duplicates per parent, summed by
a constant pooling matrix into parent predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gar import GarConfig
from .layers import DenseLayer, dense_forward
from .tensor import Tensor


class ConfigError(ValueError):
    """Layer widths disagree with the GAR configuration."""


@dataclass
class AcolActivations:
    F: Tensor  # latent, m × d
    Z: Tensor  # pre-softmax, m × n_p·k_s
    B: Tensor  # max(0, Z)
    S: Tensor  # softmax(Z)
    Y: Tensor  # pooled parent predictions, m × n_p


def column_parent(j: int, cfg: GarConfig) -> int:
    """Parent owning softmax column ``j`` (contiguous block layout)."""
    n = cfg.n_p * cfg.k_s
    if not 0 <= j < n:
        raise IndexError(f"column {j} outside [0, {n})")
    return j // cfg.k_s


def pooling_matrix(cfg: GarConfig) -> np.ndarray:
    n = cfg.n_p * cfg.k_s
    w = np.zeros((n, cfg.n_p))
    w[np.arange(n), np.arange(n) // cfg.k_s] = 1.0
    return w


def acol_forward(f: Tensor, w: DenseLayer, cfg: GarConfig) -> AcolActivations:
    n = cfg.n_p * cfg.k_s
    if w.weights.shape[1] != n or w.bias.shape != (n,):
        raise ConfigError(f"ACOL layer width {w.weights.shape[1]} != n_p*k_s = {cfg.n_p}*{cfg.k_s}")
    if f.shape[1] != w.weights.shape[0]:
        raise ConfigError(f"latent width {f.shape[1]} != ACOL fan-in {w.weights.shape[0]}")
    z = dense_forward(f, w)
    b = T.relu(z)
    s = T.softmax_rows(z)
    y = T.matmul(s, Tensor(pooling_matrix(cfg)))
    return AcolActivations(F=f, Z=z, B=b, S=s, Y=y)
