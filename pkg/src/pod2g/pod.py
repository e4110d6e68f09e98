"""POD basis from solution snapshots and the two-grid solver built on it.

The basis comes from the small ``N x N`` eigenproblem ``U^T U psi = lambda psi``
and is lifted with ``Phi = U Psi Lambda^{-1/2}``. Snapshots are not centred.
Using ``Phi_r`` as the prolongation of a two-level cycle gives the POD-2G
solver: Gauss-Seidel smoothing plus an ``r x r`` Galerkin coarse correction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .krylov import Preconditioner
from .report import History
from .smoothers import SmootherConfig, smooth
from .sparse import CsrMatrix, DenseLU, dense_eigh_spd, extract_diagonal, load_vectors, save_vectors

DEFAULT_ENERGY = 0.9999


@dataclass(frozen=True, eq=False)
class PodBasis:
    phi: np.ndarray  # (d, r), orthonormal columns
    eigenvalues: np.ndarray  # all N eigenvalues of U^T U, descending
    energy_fraction: float
    source_hash: str = ""

    def __post_init__(self):
        self.phi.setflags(write=False)
        self.eigenvalues.setflags(write=False)

    @property
    def rank(self) -> int:
        return self.phi.shape[1]

    @property
    def dim(self) -> int:
        return self.phi.shape[0]

    def truncate(self, r: int) -> "PodBasis":
        if not 1 <= r <= self.rank:
            raise ValueError(f"cannot truncate a rank-{self.rank} basis to {r}")
        lam = np.clip(self.eigenvalues, 0.0, None)
        return PodBasis(self.phi[:, :r].copy(), self.eigenvalues.copy(),
                        float(lam[:r].sum() / lam.sum()), self.source_hash)

    def project(self, u) -> np.ndarray:
        return self.phi @ (self.phi.T @ u)

    def save(self, stem) -> None:
        save_vectors(stem, self.phi.T, d=self.dim, r=self.rank,
                     eigenvalues=self.eigenvalues.tolist(),
                     energy_fraction=self.energy_fraction, snapshot_hash=self.source_hash)

    @classmethod
    def load(cls, stem) -> "PodBasis":
        rows, header = load_vectors(stem)
        return cls(np.ascontiguousarray(rows.T), np.array(header["eigenvalues"]),
                   header["energy_fraction"], header.get("snapshot_hash", ""))


def _orthonormality_defect(phi):
    return np.abs(phi.T @ phi - np.eye(phi.shape[1])).max()


def compute_pod(snapshots, rank: int | None = None, energy: float | None = None,
                rel_cutoff: float = 1e-12) -> PodBasis:
    """Truncated POD basis of the snapshot columns.

    Exactly one of ``rank`` or ``energy`` may be given; with neither, the
    energy target defaults to 0.9999. ``snapshots`` is a ``SnapshotSet`` or a
    ``(d, N)`` array of column snapshots.
    """
    if rank is not None and energy is not None:
        raise ValueError("give either rank or energy, not both")
    if energy is None and rank is None:
        energy = DEFAULT_ENERGY
    if energy is not None and not 0.0 < energy <= 1.0:
        raise ValueError("energy target must lie in (0, 1]")
    source = ""
    if hasattr(snapshots, "matrix"):
        source = snapshots.content_hash()
        U = np.asarray(snapshots.matrix, dtype=np.float64)
    else:
        U = np.atleast_2d(np.asarray(snapshots, dtype=np.float64))
    if U.shape[1] < 1:
        raise ValueError("need at least one snapshot")
    if not np.any(U):
        raise ValueError("snapshot matrix is identically zero")
    lam, psi = dense_eigh_spd(U.T @ U)
    lam_max = lam[0]
    keep = lam > rel_cutoff * lam_max
    n_ok = int(keep.sum())
    lam_pos = np.clip(lam, 0.0, None)
    cum = np.cumsum(lam_pos) / lam_pos.sum()
    if rank is not None:
        if rank < 1:
            raise ValueError("rank must be >= 1")
        r = min(rank, n_ok)
    else:
        r = min(int(np.searchsorted(cum, energy * (1 - 1e-15)) + 1), n_ok)
    phi = (U @ psi[:, :r]) / np.sqrt(lam[:r])
    if _orthonormality_defect(phi) > 1e-8:
        phi, _ = np.linalg.qr(phi)
        # keep the sign convention of the lifted vectors
        phi *= np.sign(np.sum(phi * (U @ psi[:, :r]), axis=0))
    return PodBasis(np.ascontiguousarray(phi), lam, float(cum[r - 1]), source)


def reduced_solve(K: CsrMatrix, f, basis: PodBasis):
    """Galerkin solve in ``span(Phi_r)``; returns ``(Phi_r u_r, u_r)``."""
    phi = basis.phi
    Kr = phi.T @ (K.to_scipy() @ phi)
    fr = phi.T @ np.asarray(f, dtype=np.float64)
    ur = DenseLU(0.5 * (Kr + Kr.T)).solve(fr)
    return phi @ ur, ur


class Pod2G:
    """Two-grid cycle with ``Phi_r`` as prolongation, bound to one matrix ``K``."""

    def __init__(self, K: CsrMatrix, basis: PodBasis, pre: int = 1, post: int = 1,
                 smoother: SmootherConfig = SmootherConfig()):
        if basis.dim != K.nrows:
            raise ValueError(f"basis dimension {basis.dim} != system size {K.nrows}")
        t0 = time.perf_counter()
        self.K = K
        self.basis = basis
        self.pre = pre
        self.post = post
        self.smoother = smoother
        self.diag = extract_diagonal(K)
        phi = basis.phi
        Kr = phi.T @ (K.to_scipy() @ phi)
        self.Kr = 0.5 * (Kr + Kr.T)
        self.lu = DenseLU(self.Kr)
        self.setup_time = time.perf_counter() - t0

    def cycle(self, f, u, symmetric: bool = False) -> np.ndarray:
        K, phi = self.K, self.basis.phi
        u = smooth(K, f, u, self.smoother, self.pre, diag=self.diag)
        r = f - K @ u
        u = u + phi @ self.lu.solve(phi.T @ r)
        return smooth(K, f, u, self.smoother, self.post, diag=self.diag, reverse=symmetric)

    def solve(self, f, u0=None, tol: float = 1e-8, max_cycles: int = 5000):
        f = np.asarray(f, dtype=np.float64)
        u = np.zeros_like(f) if u0 is None else np.array(u0, dtype=np.float64)
        hist = History(np.linalg.norm(f))
        rel = hist.push(np.linalg.norm(f - self.K @ u))
        k = 0
        while rel > tol and k < max_cycles:
            u = self.cycle(f, u)
            rel = hist.push(np.linalg.norm(f - self.K @ u))
            k += 1
        return u, hist.report(rel <= tol, "POD-2G", self.setup_time)


def pod2g_cycle(K: CsrMatrix, f, u, basis: PodBasis, pre: int = 1, post: int = 1) -> np.ndarray:
    return Pod2G(K, basis, pre, post).cycle(np.asarray(f, dtype=np.float64), u)


def pod2g_solve(K: CsrMatrix, f, basis: PodBasis, u0=None, tol: float = 1e-8,
                max_cycles: int = 5000, pre: int = 1, post: int = 1):
    return Pod2G(K, basis, pre, post).solve(f, u0, tol, max_cycles)


class Pod2GPreconditioner(Preconditioner):
    """One symmetric POD-2G cycle from zero on ``K s = r``."""

    name = "POD-2G"

    def __init__(self, solver: Pod2G):
        self.solver = solver
        self.setup_time = solver.setup_time

    def apply(self, r):
        r = np.asarray(r, dtype=np.float64)
        return self.solver.cycle(r, np.zeros_like(r), symmetric=True)
