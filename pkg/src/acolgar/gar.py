"""Graph-based activity regularization terms over B = max(0, Z).

All ratios carry an additive ``eps`` in the denominator, so the loss is
differentiable at B = 0. Training uses the per-parent (modified) forms; the
original whole-matrix forms are kept for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


class GarConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GarConfig:
    n_p: int
    k_s: int
    c_alpha: float = 0.1
    c_beta: float = 1.0
    c_F: float = 1e-6
    eps: float = 1e-8

    def __post_init__(self):
        if self.n_p < 1 or self.k_s < 1:
            raise GarConfigError(f"n_p and k_s must be >= 1 (got {self.n_p}, {self.k_s})")
        if min(self.c_alpha, self.c_beta, self.c_F) < 0:
            raise GarConfigError("GAR weights must be non-negative")
        if self.eps <= 0:
            raise GarConfigError("eps must be positive")


@dataclass
class GarTerms:
    affinity: Tensor
    balance: Tensor
    frobenius_sq: Tensor
    total: Tensor


def _check_width(b: Tensor) -> None:
    if b.ndim != 2 or b.shape[1] < 2:
        raise ValueError(f"GAR terms need an m×n matrix with n >= 2, got {b.shape}")


def _off_diagonal_ratio(sq: Tensor, eps: float) -> Tensor:
    """Σ_{i≠j} sq_ij / ((n−1)·Σ_i sq_ii + ε) for a square matrix.

    The off-diagonal mass is summed under a mask rather than as total minus
    trace, so it stays exactly non-negative for non-negative inputs.
    """
    n = sq.shape[0]
    off = T.sum(T.mul(sq, Tensor(1.0 - np.eye(n))))
    diag_sum = T.sum(T.diagonal(sq))
    return T.div(off, T.add_scalar(T.mul_scalar(diag_sum, n - 1.0), eps))


def _affinity_ratio(n_mat: Tensor, eps: float) -> Tensor:
    return _off_diagonal_ratio(n_mat, eps)


def _balance_ratio(v: Tensor, eps: float) -> Tensor:
    # V = vᵀv
    v_row = T.reshape(v, (1, v.shape[0]))
    return _off_diagonal_ratio(T.matmul(T.transpose(v_row), v_row), eps)


def affinity_original(b: Tensor, eps: float = 1e-8) -> Tensor:
    _check_width(b)
    return _affinity_ratio(T.matmul(T.transpose(b), b), eps)


def balance_original(b: Tensor, eps: float = 1e-8) -> Tensor:
    _check_width(b)
    return _balance_ratio(T.diagonal(T.matmul(T.transpose(b), b)), eps)


def _check_cfg(b: Tensor, cfg: GarConfig) -> None:
    if b.ndim != 2 or b.shape[1] != cfg.n_p * cfg.k_s:
        raise GarConfigError(f"B has shape {b.shape}; expected m×{cfg.n_p * cfg.k_s} for n_p={cfg.n_p}, k_s={cfg.k_s}")
    if cfg.k_s < 2:
        raise GarConfigError("modified GAR terms need k_s >= 2")


def parent_blocks(b: Tensor, cfg: GarConfig) -> list[Tensor]:
    """Intra-parent Ñ slices, one k_s×k_s Gram matrix per parent."""
    out = []
    for p in range(cfg.n_p):
        bk = T.slice_cols(b, p * cfg.k_s, (p + 1) * cfg.k_s)
        out.append(T.matmul(T.transpose(bk), bk))
    return out


def _mean(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = T.add(acc, t)
    return T.mul_scalar(acc, 1.0 / len(terms))


def affinity_modified(b: Tensor, cfg: GarConfig) -> Tensor:
    _check_cfg(b, cfg)
    return _mean([_affinity_ratio(n_k, cfg.eps) for n_k in parent_blocks(b, cfg)])


def balance_modified(b: Tensor, cfg: GarConfig) -> Tensor:
    _check_cfg(b, cfg)
    return _mean([_balance_ratio(T.diagonal(n_k), cfg.eps) for n_k in parent_blocks(b, cfg)])


def frobenius_sq(b: Tensor) -> Tensor:
    """||B||_F² divided by the row count, so c_F does not depend on batch size."""
    return T.mul_scalar(T.sum(T.square(b)), 1.0 / b.shape[0])


def gar_total(b: Tensor, cfg: GarConfig) -> GarTerms:
    a = affinity_modified(b, cfg)
    bal = balance_modified(b, cfg)
    fro = frobenius_sq(b)
    total = T.add(
        T.add(T.mul_scalar(a, cfg.c_alpha), T.mul_scalar(T.sub(Tensor(1.0), bal), cfg.c_beta)),
        T.mul_scalar(fro, cfg.c_F),
    )
    return GarTerms(affinity=a, balance=bal, frobenius_sq=fro, total=total)
