"""Small deterministic SPD test systems with known solutions."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .sparse import CsrMatrix, write_matrix_market

MAX_FIXTURE = 400


@dataclass(frozen=True, eq=False)
class Fixture:
    """``K u = f`` with ``f = K @ solution``; ``K`` is checked SPD on construction."""

    name: str
    K: CsrMatrix
    f: np.ndarray
    solution: np.ndarray
    provenance: str

    def __post_init__(self):
        n = self.K.nrows
        if n > MAX_FIXTURE:
            raise ValueError(f"fixture {self.name} has {n} rows, limit is {MAX_FIXTURE}")
        try:
            np.linalg.cholesky(self.K.toarray())
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"fixture {self.name} is not SPD") from exc

    @property
    def n(self) -> int:
        return self.K.nrows

    def checksum(self) -> str:
        h = hashlib.sha256(self.name.encode())
        for arr in (self.K.row_offsets, self.K.col_indices):
            h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
        for arr in (self.K.values, self.f, self.solution):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def export(self, path) -> Path:
        path = Path(path)
        write_matrix_market(path, self.K)
        return path


def _make(name, K, provenance):
    K = CsrMatrix.from_scipy(sp.csr_matrix(K), symmetric=True)
    n = K.nrows
    x = np.arange(1, n + 1) / (n + 1)
    u = np.sin(np.pi * x) + x
    return Fixture(name, K, K @ u, u, provenance)


def _tridiag(n, off=-1.0, diag=2.0):
    return sp.diags([off, diag, off], [-1, 0, 1], shape=(n, n), format="csr")


def laplacian_1d(n: int) -> Fixture:
    """``tridiag(-1, 2, -1)`` of size ``n``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return _make(f"laplacian_1d({n})", _tridiag(n), "finite-difference stencil")


def anisotropic_2d(n: int, eps: float = 0.01) -> Fixture:
    """5-point stencil on an ``n x n`` interior grid with weight ``eps`` along x."""
    if n < 2:
        raise ValueError("n must be >= 2")
    eye = sp.identity(n, format="csr")
    K = eps * sp.kron(eye, _tridiag(n)) + sp.kron(_tridiag(n), eye)
    name = f"laplacian_2d({n})" if eps == 1.0 else f"anisotropic_2d({n},{eps:g})"
    return _make(name, K, "finite-difference stencil")


def laplacian_2d(n: int) -> Fixture:
    """Isotropic 5-point Laplacian, size ``n**2``."""
    return anisotropic_2d(n, 1.0)


def random_spd(n: int, density: float = 0.1, seed: int = 0) -> Fixture:
    """``A^T A + n I`` for a seeded sparse Gaussian ``A``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=rng, data_rvs=rng.standard_normal, format="csr")
    K = (A.T @ A + n * sp.identity(n)).tocsr()
    K = 0.5 * (K + K.T)
    return _make(f"random_spd({n},{density:g},{seed})", K, "seeded random")


def elasticity_small(resolution: int = 9) -> Fixture:
    """Plane-strain system at mean parameters, small enough for dense oracles."""
    from .problems import ParametricProblem

    prob = ParametricProblem.its(resolution)
    K, f = prob.assemble(prob.mean_params())
    fx = _make(f"elasticity({resolution})", K.to_scipy(), "plane-strain assembly")
    return fx


def all_fixtures() -> list[Fixture]:
    return [laplacian_1d(50), laplacian_2d(12), anisotropic_2d(12, 0.01),
            random_spd(100, 0.05, 0), random_spd(300, 0.02, 1), elasticity_small(9)]
