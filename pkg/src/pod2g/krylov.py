"""Conjugate gradients and preconditioned conjugate gradients."""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .amg import MultigridHierarchy, v_cycle
from .report import History
from .sparse import CsrMatrix, DenseLU, extract_diagonal


class BreakdownError(ArithmeticError):
    """A CG denominator was not positive: K or T is not SPD."""


class FactorizationError(ArithmeticError):
    pass


class Preconditioner:
    """``apply(r)`` returns ``T^{-1} r``; a fixed linear map per instance."""

    name = "Identity"
    setup_time = 0.0

    def apply(self, r: np.ndarray) -> np.ndarray:
        return np.array(r, dtype=np.float64, copy=True)

    def __call__(self, r):
        return self.apply(r)


Identity = Preconditioner


class Jacobi(Preconditioner):
    name = "Jacobi"

    def __init__(self, K: CsrMatrix):
        t0 = time.perf_counter()
        d = extract_diagonal(K)
        if np.any(d <= 0):
            raise FactorizationError("Jacobi preconditioner needs a positive diagonal")
        self.inv_diag = 1.0 / d
        self.setup_time = time.perf_counter() - t0

    def apply(self, r):
        return self.inv_diag * r


class ILU0(Preconditioner):
    """Zero-fill incomplete LU on the pattern of ``K``."""

    name = "ILU0"

    def __init__(self, K: CsrMatrix):
        t0 = time.perf_counter()
        self.K = K
        lu, bad = _kernels.ilu0_factor(K.row_offsets, K.col_indices, K.values)
        if bad >= 0:
            raise FactorizationError(f"ILU(0) zero pivot at row {bad}")
        self.lu = lu
        self.dpos = _kernels.diag_positions(K.row_offsets, K.col_indices)
        self.setup_time = time.perf_counter() - t0

    def factors(self):
        """Dense ``(L, U)`` with unit-lower ``L``; for tests on small matrices."""
        n = self.K.nrows
        full = CsrMatrix(n, n, self.K.row_offsets, self.K.col_indices, self.lu).toarray()
        return np.tril(full, -1) + np.eye(n), np.triu(full)

    def apply(self, r):
        out = np.empty_like(r, dtype=np.float64)
        _kernels.ilu0_apply(self.K.row_offsets, self.K.col_indices, self.lu, self.dpos,
                            np.asarray(r, dtype=np.float64), out)
        return out


class IChol0(Preconditioner):
    """Zero-fill incomplete Cholesky ``K ~ L L^T``.

    A non-positive pivot triggers a retry with the diagonal shifted by
    ``alpha * diag(K)`` for alpha in 1e-3, 1e-2, 1e-1.
    """

    name = "IChol0"
    shifts = (0.0, 1e-3, 1e-2, 1e-1)

    def __init__(self, K: CsrMatrix):
        t0 = time.perf_counter()
        lower = sp.tril(K.to_scipy(), format="csr")
        lower.sort_indices()
        d = lower.diagonal()
        if np.any(d <= 0):
            raise FactorizationError("incomplete Cholesky needs a positive diagonal")
        self.indptr = lower.indptr.astype(np.int64)
        self.indices = lower.indices.astype(np.int64)
        for alpha in self.shifts:
            lv, bad = _kernels.ichol0_factor(self.indptr, self.indices, lower.data.astype(np.float64), alpha * d)
            if bad < 0:
                break
        else:
            raise FactorizationError(f"IC(0) failed at row {bad} even with diagonal shift {alpha}")
        self.shift = alpha
        self.lv = lv
        self.n = K.nrows
        self.setup_time = time.perf_counter() - t0

    def factor(self) -> np.ndarray:
        return CsrMatrix(self.n, self.n, self.indptr, self.indices, self.lv).toarray()

    def apply(self, r):
        out = np.empty(self.n)
        _kernels.ichol0_apply(self.indptr, self.indices, self.lv, np.asarray(r, dtype=np.float64), out)
        return out


make_ilu0 = ILU0
make_ichol0 = IChol0


class DensePreconditioner(Preconditioner):
    """Exact inverse of a given matrix (``T = K`` gives one-step convergence)."""

    name = "Exact"

    def __init__(self, T):
        t0 = time.perf_counter()
        self.lu = DenseLU(T.toarray() if isinstance(T, CsrMatrix) else T)
        self.setup_time = time.perf_counter() - t0

    def apply(self, r):
        return self.lu.solve(r)


class AmgPreconditioner(Preconditioner):
    """One V-cycle from a zero guess on ``K s = r``.

    The post-smoother runs in reverse order so the operator is symmetric.
    """

    def __init__(self, hierarchy: MultigridHierarchy, symmetric: bool = True):
        self.h = hierarchy
        self.symmetric = symmetric
        self.name = f"AMG-{hierarchy.n_levels}G"
        self.setup_time = hierarchy.setup_time

    def apply(self, r):
        r = np.asarray(r, dtype=np.float64)
        return v_cycle(self.h, r, np.zeros_like(r), symmetric=self.symmetric)


def cg_solve(K: CsrMatrix, f, u0=None, tol: float = 1e-10, max_iter: int | None = None, record: bool = False):
    """Plain conjugate gradients, stopping on relative residual ``<= tol``.

    With ``record=True`` the report gains ``residuals``, ``directions`` and
    ``iterates`` attributes holding every ``r_k``, ``p_k`` and ``u_k``.
    """
    f = np.asarray(f, dtype=np.float64)
    n = len(f)
    max_iter = 10 * n if max_iter is None else max_iter
    u = np.zeros(n) if u0 is None else np.array(u0, dtype=np.float64)
    r = f - K @ u
    hist = History(np.linalg.norm(f))
    rel = hist.push(np.linalg.norm(r))
    p = r.copy()
    rr = r @ r
    rs, ps, us = [r.copy()], [p.copy()], [u.copy()]
    k = 0
    while rel > tol and k < max_iter:
        Kp = K @ p
        pKp = p @ Kp
        if pKp <= 0:
            raise BreakdownError(f"p^T K p = {pKp:.3e} at iteration {k}")
        alpha = rr / pKp
        u = u + alpha * p
        r = r - alpha * Kp
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        k += 1
        rel = hist.push(np.linalg.norm(r))
        if record:
            rs.append(r.copy())
            ps.append(p.copy())
            us.append(u.copy())
    rep = hist.report(rel <= tol, "CG")
    if record:
        rep.residuals, rep.directions, rep.iterates = rs, ps, us
    return u, rep


def pcg_solve(K: CsrMatrix, f, T: Preconditioner | None = None, u0=None, tol: float = 1e-10,
              max_iter: int | None = None, record: bool = False):
    """Preconditioned CG; ``T.apply`` supplies ``s = T^{-1} r`` each iteration."""
    T = Preconditioner() if T is None else T
    f = np.asarray(f, dtype=np.float64)
    n = len(f)
    max_iter = 10 * n if max_iter is None else max_iter
    u = np.zeros(n) if u0 is None else np.array(u0, dtype=np.float64)
    r = f - K @ u
    hist = History(np.linalg.norm(f))
    rel = hist.push(np.linalg.norm(r))
    iterates = [u.copy()]
    k = 0
    if rel > tol:
        s = T.apply(r)
        p = s.copy()
        rs = r @ s
        if rs <= 0:
            raise BreakdownError(f"r^T T^-1 r = {rs:.3e}: preconditioner not SPD")
    while rel > tol and k < max_iter:
        Kp = K @ p
        pKp = p @ Kp
        if pKp <= 0:
            raise BreakdownError(f"p^T K p = {pKp:.3e} at iteration {k}")
        alpha = rs / pKp
        u = u + alpha * p
        r = r - alpha * Kp
        k += 1
        rel = hist.push(np.linalg.norm(r))
        if record:
            iterates.append(u.copy())
        if rel <= tol:
            break
        s = T.apply(r)
        rs_new = r @ s
        if rs_new <= 0:
            raise BreakdownError(f"r^T T^-1 r = {rs_new:.3e} at iteration {k}")
        p = s + (rs_new / rs) * p
        rs = rs_new
    rep = hist.report(rel <= tol, f"PCG-{T.name}", T.setup_time)
    if record:
        rep.iterates = iterates
    return u, rep


def amg_preconditioned_pcg(K: CsrMatrix, f, h: MultigridHierarchy, u0=None, tol: float = 1e-8,
                           max_iter: int | None = None):
    """PCG where every preconditioner application is one V-cycle from zero."""
    return pcg_solve(K, f, AmgPreconditioner(h), u0, tol, max_iter)
