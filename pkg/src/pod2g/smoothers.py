"""Relaxation sweeps and their explicit error-propagation matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .sparse import DENSE_CAP, CsrMatrix, DimensionError, extract_diagonal


class ZeroDiagonalError(ValueError):
    pass


@dataclass(frozen=True)
class SmootherConfig:
    """``kind`` is ``"gs"`` (forward Gauss-Seidel) or ``"jacobi"`` (damped, weight ``omega``)."""

    kind: str = "gs"
    sweeps: int = 1
    omega: float = 2.0 / 3.0

    def __post_init__(self):
        if self.kind not in ("gs", "jacobi"):
            raise ValueError(f"unknown smoother {self.kind!r}")
        if self.sweeps < 0:
            raise ValueError("sweeps must be >= 0")
        if not 0.0 < self.omega <= 1.0:
            raise ValueError("omega must lie in (0, 1]")


def _checked_diag(K: CsrMatrix) -> np.ndarray:
    if K.nrows != K.ncols:
        raise DimensionError("smoothing needs a square matrix")
    d = extract_diagonal(K)
    if np.any(d == 0.0):
        raise ZeroDiagonalError(f"zero diagonal entry at row {int(np.flatnonzero(d == 0.0)[0])}")
    return d


def gauss_seidel_sweep(K: CsrMatrix, f, u, sweeps: int = 1, diag=None, reverse: bool = False) -> np.ndarray:
    """Return ``u`` after ``sweeps`` ascending-index Gauss-Seidel sweeps.

    Each sweep is ``u <- u + L^{-1}(f - K u)`` with ``L`` the lower triangle of
    ``K`` including the diagonal. ``reverse=True`` sweeps in descending order
    (the ``K``-adjoint sweep used to symmetrize a cycle).
    """
    d = _checked_diag(K) if diag is None else diag
    u = np.array(u, dtype=np.float64, copy=True)
    f = np.asarray(f, dtype=np.float64)
    if sweeps > 0:
        kern = _kernels.gs_backward if reverse else _kernels.gs_forward
        kern(K.row_offsets, K.col_indices, K.values, d, f, u, int(sweeps))
    return u


def jacobi_sweep(K: CsrMatrix, f, u, omega: float = 2.0 / 3.0, sweeps: int = 1, diag=None) -> np.ndarray:
    d = _checked_diag(K) if diag is None else diag
    u = np.array(u, dtype=np.float64, copy=True)
    for _ in range(sweeps):
        u += omega * (f - K @ u) / d
    return u


def smooth(K: CsrMatrix, f, u, config: SmootherConfig, sweeps: int, diag=None, reverse: bool = False):
    if config.kind == "gs":
        return gauss_seidel_sweep(K, f, u, sweeps, diag=diag, reverse=reverse)
    return jacobi_sweep(K, f, u, config.omega, sweeps, diag=diag)


def gs_iteration_matrix(K: CsrMatrix, cap: int = DENSE_CAP, reverse: bool = False) -> np.ndarray:
    """Dense ``M = I - L^{-1} K`` for forward Gauss-Seidel.

    With ``reverse=True`` the upper triangle replaces ``L`` (backward sweep).
    """
    if K.nrows > cap:
        raise ValueError(f"matrix of size {K.nrows} exceeds the dense cap {cap}")
    _checked_diag(K)
    Kd = K.toarray()
    tri = np.triu(Kd) if reverse else np.tril(Kd)
    return np.eye(K.nrows) - sla.solve_triangular(tri, Kd, lower=not reverse)


def jacobi_iteration_matrix(K: CsrMatrix, omega: float = 2.0 / 3.0, cap: int = DENSE_CAP) -> np.ndarray:
    if K.nrows > cap:
        raise ValueError(f"matrix of size {K.nrows} exceeds the dense cap {cap}")
    d = _checked_diag(K)
    return np.eye(K.nrows) - omega * K.toarray() / d[:, None]


def iteration_matrix(K: CsrMatrix, config: SmootherConfig, reverse: bool = False) -> np.ndarray:
    if config.kind == "gs":
        return gs_iteration_matrix(K, reverse=reverse)
    return jacobi_iteration_matrix(K, config.omega)
