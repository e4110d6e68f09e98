"""Dense error-propagation operators and a numerical check of the two-grid error bound.

For a two-grid cycle with smoother iteration matrix ``M``, prolongation ``P``
and ``r1``/``r2`` pre/post sweeps the error after one cycle is

    e_new = M^{r2} C M^{r1} e,    C = I - P (P^T K P)^{-1} P^T K.

:func:`verify_error_bound` estimates a contraction factor ``gamma`` for
``M`` from a finite window of Gelfand's formula and a norm ``C`` for the
coarse correction on the orthogonal complement of ``span(P)``, and compares
the product against measured per-cycle error ratios.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .smoothers import SmootherConfig, iteration_matrix
from .sparse import DENSE_CAP, CsrMatrix, DenseLU, dense_eigh_spd


class ConvergenceError(RuntimeError):
    pass


def spectral_radius(A, tol: float = 1e-10, restarts: int = 5, max_iter: int = 10_000,
                    seed: int = 0, cap: int = DENSE_CAP) -> float:
    """Largest eigenvalue modulus by power iteration.

    Each step takes a Ritz estimate on ``span{x, A x}``, so a dominant
    complex-conjugate pair (where the plain Rayleigh quotient oscillates) is
    resolved as well. The largest value over ``restarts`` random starts is
    returned.

    Raises
    ------
    ConvergenceError
        If no start settles to relative change ``tol`` within ``max_iter``.
    """
    A = A.toarray() if isinstance(A, CsrMatrix) else np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError("spectral radius needs a square matrix")
    if n > cap:
        raise ValueError(f"matrix of size {n} exceeds the dense cap {cap}")
    if not np.any(A):
        return 0.0
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        prev, streak = np.inf, 0
        for _ in range(max_iter):
            y = A @ x
            ny = np.linalg.norm(y)
            if ny == 0.0:
                est = 0.0
                streak = 3
                break
            Q, _ = np.linalg.qr(np.column_stack([x, y / ny]))
            est = float(np.abs(np.linalg.eigvals(Q.T @ A @ Q)).max())
            if abs(est - prev) <= tol * max(est, 1e-300):
                streak += 1
                if streak >= 3:
                    break
            else:
                streak = 0
            prev = est
            x = y / ny
        if streak >= 3:
            best = est if best is None else max(best, est)
    if best is None:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")
    return best


def _dense_prolongation(P) -> np.ndarray:
    if isinstance(P, CsrMatrix):
        return P.toarray()
    if hasattr(P, "phi"):
        return np.asarray(P.phi)
    return np.asarray(P, dtype=np.float64)


def coarse_correction(K, P) -> np.ndarray:
    """Dense ``C = I - P (P^T K P)^{-1} P^T K``; raises if the coarse operator is singular."""
    Kd = K.toarray() if isinstance(K, CsrMatrix) else np.asarray(K, dtype=np.float64)
    Pd = _dense_prolongation(P)
    Kc = Pd.T @ Kd @ Pd
    lu = DenseLU(0.5 * (Kc + Kc.T))
    return np.eye(Kd.shape[0]) - Pd @ lu.solve(Pd.T @ Kd)


def two_grid_operator(K: CsrMatrix, P, r1: int = 1, r2: int = 1,
                      smoother: SmootherConfig = SmootherConfig(), symmetric: bool = False) -> np.ndarray:
    """Dense error propagator ``M^{r2} C M^{r1}`` of one two-grid cycle.

    ``P`` is a sparse prolongation, a dense ``d x r`` matrix or a ``PodBasis``.
    ``symmetric=True`` uses backward sweeps after the correction.
    """
    M = iteration_matrix(K, smoother)
    Mpost = iteration_matrix(K, smoother, reverse=True) if symmetric else M
    C = coarse_correction(K, P)
    return np.linalg.matrix_power(Mpost, r2) @ C @ np.linalg.matrix_power(M, r1)


def spectral_norm(A) -> float:
    """``|A|_2`` from the largest eigenvalue of ``A^T A``."""
    A = np.asarray(A, dtype=np.float64)
    lam, _ = dense_eigh_spd(A.T @ A)
    return float(np.sqrt(max(lam[0], 0.0)))


def gelfand_gamma(M, window=(5, 15)) -> tuple[float, list[float]]:
    """``max_k |M^k|^{1/k}`` over ``k`` in the closed ``window``.

    Returns the maximum and the per-``k`` values.
    """
    k0, k1 = window
    Mk = np.linalg.matrix_power(M, k0)
    vals = []
    for k in range(k0, k1 + 1):
        if k > k0:
            Mk = Mk @ M
        vals.append(spectral_norm(Mk) ** (1.0 / k))
    return max(vals), vals


@dataclass
class ErrorBoundEstimate:
    """Result of :func:`verify_error_bound`.

    ``hypotheses_hold`` requires ``rho_M < 1`` and ``C < 1``; ``bound_holds``
    is evaluated regardless so violations of the bound can be seen even when
    its hypotheses fail.
    """

    gamma: float
    C: float
    r1: int
    r2: int
    rank: int
    per_cycle_bound: float
    observed_ratios: list[float]
    rho_M: float
    rho_E: float
    gamma_window: list[float] = field(default_factory=list)
    surrogate_errors: list[float] = field(default_factory=list)
    surrogate_bounds: list[float] = field(default_factory=list)

    @property
    def observed_ratio(self) -> float:
        return max(self.observed_ratios) if self.observed_ratios else 0.0

    @property
    def flags(self) -> dict:
        return {
            "rho_M_lt_1": self.rho_M < 1.0,
            "C_lt_1": self.C < 1.0,
            "bound_lt_1": self.per_cycle_bound < 1.0,
            "hypotheses_hold": self.hypotheses_hold,
            "bound_holds": self.bound_holds,
            "surrogate_bound_holds": self.surrogate_bound_holds,
        }

    @property
    def hypotheses_hold(self) -> bool:
        return self.rho_M < 1.0 and self.C < 1.0

    @property
    def bound_holds(self) -> bool:
        return self.observed_ratio <= self.per_cycle_bound + 1e-8

    @property
    def surrogate_bound_holds(self) -> bool:
        return all(e <= b * (1 + 1e-10) + 1e-14 for e, b in zip(self.surrogate_errors, self.surrogate_bounds))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["observed_ratio"] = self.observed_ratio
        d["flags"] = self.flags
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def verify_error_bound(K: CsrMatrix, basis, r1: int = 1, r2: int = 1, trials: int = 100, seed: int = 0,
                       window=(5, 15), e_sur=None, cycles: int = 10,
                       smoother: SmootherConfig = SmootherConfig()) -> ErrorBoundEstimate:
    """Estimate ``gamma`` and ``C`` and test ``|E e| <= gamma^{r1+r2} C |e|``.

    Parameters
    ----------
    K : CsrMatrix
        Small SPD system (dense operators are formed).
    basis : PodBasis, ndarray or CsrMatrix
        Prolongation of the two-grid cycle.
    trials : int
        Number of random initial errors for the per-cycle ratio.
    e_sur : array, optional
        Initial error of a surrogate warm start; when given, the error after
        each of ``cycles`` cycles is recorded next to
        ``(gamma^{r2} C gamma^{r1})^k |e_sur|``.
    """
    Pd = _dense_prolongation(basis)
    d, rank = Pd.shape
    M = iteration_matrix(K, smoother)
    gamma, gvals = gelfand_gamma(M, window)
    C_full = coarse_correction(K, Pd)
    Q, _ = np.linalg.qr(Pd)
    comp = np.eye(d) - Q @ Q.T
    C = spectral_norm(C_full @ comp)
    E = np.linalg.matrix_power(M, r2) @ C_full @ np.linalg.matrix_power(M, r1)
    rho_M = spectral_radius(M, tol=1e-10, seed=seed)
    rho_E = spectral_radius(E, tol=1e-10, seed=seed)
    bound = gamma ** (r1 + r2) * C
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(trials):
        e = rng.standard_normal(d)
        ratios.append(float(np.linalg.norm(E @ e) / np.linalg.norm(e)))
    sur_err, sur_bound = [], []
    if e_sur is not None:
        e = np.asarray(e_sur, dtype=np.float64)
        e0 = np.linalg.norm(e)
        for k in range(1, cycles + 1):
            e = E @ e
            sur_err.append(float(np.linalg.norm(e)))
            sur_bound.append(float(bound**k * e0))
    return ErrorBoundEstimate(float(gamma), float(C), r1, r2, rank, float(bound), ratios,
                              float(rho_M), float(rho_E), [float(g) for g in gvals], sur_err, sur_bound)
