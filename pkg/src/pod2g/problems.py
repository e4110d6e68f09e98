"""Parametrized finite-element test systems and parameter sampling.

Two structured-mesh problems are provided:

* ``its``: plane-strain elasticity on the unit square, 3-node triangles,
  bottom edge clamped, downward point load at the top-centre node.
  Random parameters are the Young modulus ``E`` and the load ``P``.
* ``biot``: steady coupled displacement-pressure problem on the unit cube,
  trilinear hexahedra with equal-order pressure. Bottom face clamped, ``u_y``
  prescribed on the top face and the pressure prescribed on the left face.
  Random parameters are the Lame constants ``mu`` and ``lambda``.

Dirichlet data are eliminated, so every assembled matrix is the free-free
block and ``f = -K_fd u_d`` (plus any nodal loads).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.stats import norm, qmc

from ._pool import parallel_map
from .amg import DofMap
from .sparse import CsrMatrix, load_vectors, save_vectors

log = logging.getLogger(__name__)

BIOT_A = np.array([[0.13, 0.13, 0.13], [0.09, 0.09, 0.09], [0.0, 0.0, 0.0]])
BIOT_D = np.array([[2.0, 0.2, 0.0], [0.2, 2.0, 0.0], [0.0, 0.0, 0.5]])


def lame_from_engineering(E: float, nu: float) -> tuple[float, float]:
    """Convert Young modulus and Poisson ratio to ``(mu, lambda)``."""
    if E <= 0:
        raise ValueError(f"Young modulus must be positive, got {E}")
    if nu >= 0.5:
        raise ValueError(f"Poisson ratio {nu} reaches the incompressible limit")
    if nu < 0:
        raise ValueError(f"Poisson ratio must be non-negative, got {nu}")
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return mu, lam


@dataclass(frozen=True)
class Lognormal:
    """Lognormal variable given by the mean and std of the physical quantity.

    A negative mean describes the mirrored distribution (``-X`` with ``X``
    lognormal), which is how compressive loads are parametrized.
    """

    name: str
    mean: float
    std: float

    def __post_init__(self):
        if self.mean == 0:
            raise ValueError(f"{self.name}: lognormal mean must be non-zero")
        if self.std <= 0:
            raise ValueError(f"{self.name}: lognormal std must be positive")

    @property
    def log_params(self) -> tuple[float, float]:
        s2 = np.log1p(self.std**2 / self.mean**2)
        return np.log(abs(self.mean)) - 0.5 * s2, np.sqrt(s2)

    def ppf(self, q):
        mu_ln, sigma_ln = self.log_params
        return np.sign(self.mean) * np.exp(mu_ln + sigma_ln * norm.ppf(q))


ITS_PARAMS = (Lognormal("E", 2000.0, 600.0), Lognormal("P", -1000.0, 300.0))
BIOT_PARAMS = (Lognormal("mu", 0.30, 0.09), Lognormal("lambda", 1.70, 0.51))


def latin_hypercube_lognormal(n_samples: int, distributions, seed) -> np.ndarray:
    """Stratified lognormal samples, one row per sample.

    Each column places exactly one uniform draw in every stratum
    ``[k/n, (k+1)/n)`` before the inverse-CDF transform.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    distributions = list(distributions)
    sampler = qmc.LatinHypercube(d=len(distributions), rng=np.random.default_rng(seed))
    q = sampler.random(n_samples)
    return np.column_stack([d.ppf(q[:, i]) for i, d in enumerate(distributions)])


def random_lognormal(n_samples: int, distributions, seed) -> np.ndarray:
    """Plain (unstratified) Monte-Carlo draws."""
    rng = np.random.default_rng(seed)
    distributions = list(distributions)
    q = rng.random((n_samples, len(distributions)))
    return np.column_stack([d.ppf(q[:, i]) for i, d in enumerate(distributions)])


# --- elasticity (plane strain) ------------------------------------------------


def _plane_strain_d(mu, lam):
    return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])


def _square_mesh(n):
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)  # node (i, j) -> index j*(n+1)+i
    coords = np.column_stack([X.ravel(), Y.ravel()])
    nid = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a = nid[:-1, :-1].ravel()
    b = nid[:-1, 1:].ravel()
    c = nid[1:, 1:].ravel()
    d = nid[1:, :-1].ravel()
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return coords, tris


def _cst_stiffness(coords, tris, dmat):
    """Element matrices (ne, 6, 6) for constant-strain triangles."""
    xy = coords[tris]  # (ne, 3, 2)
    x, y = xy[..., 0], xy[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area2 = x[:, 0] * b[:, 0] + x[:, 1] * b[:, 1] + x[:, 2] * b[:, 2]
    ne = len(tris)
    B = np.zeros((ne, 3, 6))
    B[:, 0, 0::2] = b
    B[:, 1, 1::2] = c
    B[:, 2, 0::2] = c
    B[:, 2, 1::2] = b
    B /= area2[:, None, None]
    return 0.5 * area2[:, None, None] * np.einsum("eki,kl,elj->eij", B, dmat, B)


def _scatter(ke, edofs, ndof):
    rows = np.repeat(edofs, edofs.shape[1], axis=1).ravel()
    cols = np.tile(edofs, (1, edofs.shape[1])).ravel()
    return sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(ndof, ndof))


@dataclass(frozen=True)
class Assembly:
    """Result of assembling one parameter instance.

    Unpacks as ``K, f = assembly``.
    """

    K: CsrMatrix
    f: np.ndarray
    dofs: DofMap
    qoi_dofs: tuple[int, ...]

    def __iter__(self):
        return iter((self.K, self.f))

    @property
    def ndof(self) -> int:
        return self.K.nrows


def _eliminate(kfull, ffull, fixed, values):
    """Drop constrained dofs, moving their known values to the right-hand side."""
    ndof = kfull.shape[0]
    free = np.setdiff1d(np.arange(ndof), fixed)
    ubar = np.zeros(ndof)
    ubar[fixed] = values
    rhs = ffull - kfull @ ubar
    kff = kfull[free][:, free]
    kff = 0.5 * (kff + kff.T)
    return CsrMatrix.from_scipy(kff, symmetric=True), rhs[free], free


def _dof_map(free, block):
    return DofMap.blocked(free[-1] + 1, block).restrict(free)


def assemble_plane_strain(resolution: int, E: float, nu: float, P: float) -> Assembly:
    """Plane-strain elasticity on an ``resolution x resolution`` right-triangle mesh."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    mu, lam = lame_from_engineering(E, nu)
    n = resolution
    coords, tris = _square_mesh(n)
    ke = _cst_stiffness(coords, tris, _plane_strain_d(mu, lam))
    edofs = np.empty((len(tris), 6), dtype=np.int64)
    edofs[:, 0::2] = 2 * tris
    edofs[:, 1::2] = 2 * tris + 1
    ndof = 2 * len(coords)
    kfull = _scatter(ke, edofs, ndof)
    ffull = np.zeros(ndof)
    top = n * (n + 1) + n // 2
    ffull[2 * top + 1] = P
    bottom = np.arange(n + 1)
    fixed = np.sort(np.concatenate([2 * bottom, 2 * bottom + 1]))
    K, f, free = _eliminate(kfull, ffull, fixed, 0.0)
    qoi = int(np.searchsorted(free, 2 * top + 1))
    return Assembly(K, f, _dof_map(free, 2), (qoi,))


# --- Biot (trilinear hexahedra) ---------------------------------------------

_GP = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_CORNERS = np.array(
    [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1], [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]],
    dtype=float,
)


def _hex_reference():
    """Shape values (8 gp, 8) and reference gradients (8 gp, 8, 3) at 2x2x2 Gauss points."""
    pts = np.array([[a, b, c] for c in _GP for b in _GP for a in _GP])
    N = np.prod(1.0 + pts[:, None, :] * _CORNERS[None, :, :], axis=2) / 8.0
    dN = np.empty((8, 8, 3))
    for k in range(3):
        terms = 1.0 + pts[:, None, :] * _CORNERS[None, :, :]
        terms[:, :, k] = _CORNERS[None, :, k]
        dN[:, :, k] = np.prod(terms, axis=2) / 8.0
    return N, dN


def _biot_element(h, mu, lam, a_voigt, dmat):
    """32x32 element matrix, local dof order (ux, uy, uz, p) per node."""
    N, dN = _hex_reference()
    grads = dN * (2.0 / h)  # uniform cube elements: J = h/2 I
    wdet = (h / 2.0) ** 3
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[np.arange(3), np.arange(3)] += 2 * mu
    C[3:, 3:] = mu * np.eye(3)
    kuu = np.zeros((24, 24))
    kup = np.zeros((24, 8))
    kpp = np.zeros((8, 8))
    for g in range(8):
        G = grads[g]  # (8, 3)
        B = np.zeros((6, 24))
        B[0, 0::3] = G[:, 0]
        B[1, 1::3] = G[:, 1]
        B[2, 2::3] = G[:, 2]
        B[3, 1::3] = G[:, 2]
        B[3, 2::3] = G[:, 1]
        B[4, 0::3] = G[:, 2]
        B[4, 2::3] = G[:, 0]
        B[5, 0::3] = G[:, 1]
        B[5, 1::3] = G[:, 0]
        kuu += wdet * B.T @ C @ B
        kup += wdet * np.outer(B.T @ a_voigt, N[g])
        kpp += wdet * G @ dmat @ G.T
    ke = np.zeros((32, 32))
    u_idx = np.array([4 * a + c for a in range(8) for c in range(3)])
    p_idx = 4 * np.arange(8) + 3
    ke[np.ix_(u_idx, u_idx)] = kuu
    ke[np.ix_(u_idx, p_idx)] = -kup
    ke[np.ix_(p_idx, u_idx)] = -kup.T
    ke[np.ix_(p_idx, p_idx)] = kpp
    return ke


def _cube_mesh(n):
    m = n + 1
    nid = np.arange(m**3).reshape(m, m, m)  # [k, j, i] -> z, y, x
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="xy")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    hexes = np.column_stack(
        [
            nid[k, j, i], nid[k, j, i + 1], nid[k, j + 1, i + 1], nid[k, j + 1, i],
            nid[k + 1, j, i], nid[k + 1, j, i + 1], nid[k + 1, j + 1, i + 1], nid[k + 1, j + 1, i],
        ]
    )
    kk, jj, ii = np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij")
    coords = np.column_stack([ii.ravel(), jj.ravel(), kk.ravel()]) / n
    return coords, hexes


def assemble_biot_cube(
    resolution: int,
    mu: float,
    lam: float,
    A=BIOT_A,
    D=BIOT_D,
    p_left: float = 1.0,
    u_top: float = 0.20,
) -> Assembly:
    """Coupled displacement-pressure system on a structured cube mesh.

    The pressure block carries ``+D`` and both coupling blocks carry the
    ``-A:eps`` sign, giving a symmetric matrix that is positive definite when
    the diffusion dominates the coupling (true for the default tensors).
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if mu <= 0 or lam <= 0:
        raise ValueError("Lame constants must be positive")
    A = np.asarray(A, dtype=float)
    D = np.asarray(D, dtype=float)
    if A.shape != (3, 3) or D.shape != (3, 3):
        raise ValueError("A and D must be 3x3")
    if np.linalg.eigvalsh(0.5 * (D[:2, :2] + D[:2, :2].T)).min() < 0:
        raise ValueError("diffusion tensor is not positive semidefinite on its upper 2x2 block")
    As = 0.5 * (A + A.T)
    a_voigt = np.array([As[0, 0], As[1, 1], As[2, 2], As[1, 2], As[0, 2], As[0, 1]])
    n = resolution
    coords, hexes = _cube_mesh(n)
    ke = _biot_element(1.0 / n, mu, lam, a_voigt, 0.5 * (D + D.T))
    edofs = (4 * hexes[:, :, None] + np.arange(4)[None, None, :]).reshape(len(hexes), 32)
    ndof = 4 * len(coords)
    kfull = _scatter(np.broadcast_to(ke, (len(hexes), 32, 32)), edofs, ndof)
    tol = 1e-12
    bottom = np.flatnonzero(coords[:, 2] < tol)
    top = np.flatnonzero(coords[:, 2] > 1 - tol)
    left = np.flatnonzero(coords[:, 0] < tol)
    fixed = {}
    for node in bottom:
        for c in range(3):
            fixed[4 * node + c] = 0.0
    for node in top:
        fixed.setdefault(4 * node + 1, u_top)
    for node in left:
        fixed[4 * node + 3] = p_left
    fdofs = np.array(sorted(fixed))
    fvals = np.array([fixed[i] for i in fdofs])
    K, f, free = _eliminate(kfull, np.zeros(ndof), fdofs, fvals)
    centre = int(np.argmin(np.linalg.norm(coords - 0.5, axis=1)))
    qoi = tuple(int(np.searchsorted(free, 4 * centre + c)) for c in range(3))
    return Assembly(K, f, _dof_map(free, 4), qoi)


# --- problem descriptors ----------------------------------------------------


@dataclass(frozen=True)
class ParametricProblem:
    """A family ``K(theta) u = f(theta)`` plus its parameter distributions."""

    kind: str
    resolution: int
    distributions: tuple[Lognormal, ...]
    nu: float = 0.3
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("its", "biot"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")

    @classmethod
    def its(cls, resolution: int = 32, nu: float = 0.3) -> "ParametricProblem":
        return cls("its", resolution, ITS_PARAMS, nu=nu)

    @classmethod
    def biot(cls, resolution: int = 10) -> "ParametricProblem":
        return cls("biot", resolution, BIOT_PARAMS)

    @classmethod
    def named(cls, kind: str, resolution: int | None = None) -> "ParametricProblem":
        if kind == "its":
            return cls.its(resolution or 32)
        if kind == "biot":
            return cls.biot(resolution or 10)
        raise ValueError(f"unknown problem kind {kind!r}")

    @property
    def n_params(self) -> int:
        return len(self.distributions)

    def assemble(self, theta) -> Assembly:
        a, b = (float(t) for t in theta)
        if self.kind == "its":
            return assemble_plane_strain(self.resolution, a, self.nu, b)
        return assemble_biot_cube(self.resolution, a, b, **self.fixed)

    def mean_params(self) -> np.ndarray:
        return np.array([d.mean for d in self.distributions])

    def qoi(self, assembly: Assembly, u) -> float:
        """Top-node vertical displacement (its) or displacement magnitude at the cube centre (biot)."""
        idx = list(assembly.qoi_dofs)
        if self.kind == "its":
            return float(u[idx[0]])
        return float(np.linalg.norm(np.asarray(u)[idx]))

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "resolution": self.resolution,
            "nu": self.nu,
            "distributions": [[d.name, d.mean, d.std] for d in self.distributions],
            "fixed": {k: np.asarray(v).tolist() for k, v in sorted(self.fixed.items())},
        }

    def digest(self) -> str:
        blob = json.dumps(self.descriptor(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# --- snapshots --------------------------------------------------------------


class SnapshotError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    params: np.ndarray  # (N, n)
    solutions: np.ndarray  # (N, d)
    problem_hash: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.params) != len(self.solutions):
            raise ValueError("params and solutions differ in length")
        for arr in (self.params, self.solutions):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def dim(self) -> int:
        return self.solutions.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        """Snapshot matrix ``U`` with one solution per column."""
        return self.solutions.T

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.problem_hash.encode())
        h.update(np.ascontiguousarray(self.params, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.solutions, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def save(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        save_vectors(out / "params", self.params)
        save_vectors(out / "solutions", self.solutions)
        manifest = {
            "N": len(self),
            "d": self.dim,
            "problem_hash": self.problem_hash,
            "content_hash": self.content_hash(),
            **self.meta,
        }
        (out / "snapshots.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return out

    @classmethod
    def load(cls, directory) -> "SnapshotSet":
        src = Path(directory)
        manifest = json.loads((src / "snapshots.json").read_text())
        params, _ = load_vectors(src / "params")
        sols, _ = load_vectors(src / "solutions")
        meta = {k: v for k, v in manifest.items() if k not in ("N", "d", "problem_hash", "content_hash")}
        snaps = cls(params, sols, manifest["problem_hash"], meta)
        if snaps.content_hash() != manifest["content_hash"]:
            raise ValueError(f"{src}: snapshot content hash mismatch")
        return snaps


def _snapshot_solve(job):
    from .krylov import Jacobi, pcg_solve

    problem, i, theta, tol, max_iter = job
    K, f = problem.assemble(theta)
    u, rep = pcg_solve(K, f, Jacobi(K), None, tol, max_iter)
    if not rep.converged:
        raise SnapshotError(
            f"snapshot {i} (theta={theta.tolist()}) did not converge: "
            f"residual {rep.residual_history[-1]:.3e} after {rep.iterations} iterations"
        )
    return u


def generate_snapshots(problem: ParametricProblem, params, tol: float = 1e-10, max_iter=None,
                       jobs: int = 1) -> SnapshotSet:
    """Solve ``K(theta_i) u_i = f(theta_i)`` with Jacobi-PCG for every parameter row."""
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    if params.size == 0:
        raise ValueError("params must be non-empty")
    jobs_list = [(problem, i, theta, tol, max_iter) for i, theta in enumerate(params)]
    sols = parallel_map(_snapshot_solve, jobs_list, jobs)
    meta = {"problem": problem.descriptor(), "tol": tol}
    return SnapshotSet(params.copy(), np.array(sols), problem.digest(), meta)
