"""CSR matrices and the small set of dense kernels the solvers need.

The CSR container is immutable; its arrays are flagged read-only and a
scipy view is built once for sparse products.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import _kernels

DENSE_CAP = 2048


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A dense factorization hit a pivot that is numerically zero."""


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse row matrix with sorted, duplicate-free rows."""

    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    symmetric: bool = False
    _scipy: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        va = np.ascontiguousarray(self.values, dtype=np.float64)
        if ro.shape != (self.nrows + 1,) or ro[0] != 0:
            raise ValueError("row_offsets must have length nrows+1 and start at 0")
        if ro[-1] != len(ci) or len(ci) != len(va):
            raise ValueError("row_offsets[-1], len(col_indices) and len(values) differ")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if len(ci):
            if ci.min() < 0 or ci.max() >= self.ncols:
                raise ValueError("column index out of range")
            step = np.diff(ci)
            row_start = np.zeros(len(ci), dtype=bool)
            row_start[ro[:-1][np.diff(ro) > 0]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise ValueError("column indices must be strictly increasing within a row")
        for arr in (ro, ci, va):
            arr.setflags(write=False)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", va)
        object.__setattr__(
            self, "_scipy", sp.csr_matrix((va, ci, ro), shape=(self.nrows, self.ncols))
        )

    @classmethod
    def from_scipy(cls, a, symmetric: bool = False) -> "CsrMatrix":
        a = sp.csr_matrix(a, dtype=np.float64)
        a.sum_duplicates()
        a.sort_indices()
        return cls(a.shape[0], a.shape[1], a.indptr, a.indices, a.data, symmetric)

    @classmethod
    def from_dense(cls, a, symmetric: bool = False, drop_zeros: bool = True) -> "CsrMatrix":
        a = np.asarray(a, dtype=np.float64)
        m = sp.csr_matrix(a)
        if not drop_zeros:
            rows, cols = np.nonzero(np.ones_like(a))
            m = sp.csr_matrix((a[rows, cols], (rows, cols)), shape=a.shape)
        return cls.from_scipy(m, symmetric)

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"), symmetric=True)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    def to_scipy(self) -> sp.csr_matrix:
        """Read-only scipy view sharing this matrix's arrays."""
        return self._scipy

    def toarray(self) -> np.ndarray:
        return self._scipy.toarray()

    def __matmul__(self, x):
        return spmv(self, x)


def spmv(a: CsrMatrix, x) -> np.ndarray:
    """Sparse matrix-vector product ``a @ x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != a.ncols:
        raise DimensionError(f"matrix has {a.ncols} columns, vector has length {x.shape[0]}")
    return a.to_scipy() @ x


def is_symmetric(a: CsrMatrix, rtol: float = 1e-12) -> bool:
    if a.nrows != a.ncols:
        return False
    s = a.to_scipy()
    diff = abs(s - s.T)
    scale = abs(s).max() if a.nnz else 0.0
    return diff.nnz == 0 or diff.max() <= rtol * scale


def transpose_csr(a: CsrMatrix) -> CsrMatrix:
    return CsrMatrix.from_scipy(a.to_scipy().T.tocsr(), symmetric=a.symmetric)


def extract_diagonal(a: CsrMatrix) -> np.ndarray:
    return a.to_scipy().diagonal()


def csr_to_dense(a: CsrMatrix) -> np.ndarray:
    if max(a.shape) > DENSE_CAP:
        raise ValueError(f"matrix {a.shape} exceeds the dense cap {DENSE_CAP}")
    return a.toarray()


def galerkin_triple_product(p: CsrMatrix, k: CsrMatrix) -> CsrMatrix:
    """Coarse operator ``P^T K P``; symmetrized by averaging when ``K`` is symmetric."""
    if k.nrows != k.ncols or p.nrows != k.nrows:
        raise DimensionError(f"P {p.shape} incompatible with K {k.shape}")
    ps = p.to_scipy()
    kc = (ps.T @ (k.to_scipy() @ ps)).tocsr()
    sym = k.symmetric or is_symmetric(k)
    if sym:
        kc = ((kc + kc.T) * 0.5).tocsr()
    return CsrMatrix.from_scipy(kc, symmetric=sym)


def dot(x, y) -> float:
    return float(np.dot(x, y))


def norm2(x) -> float:
    return float(np.linalg.norm(x))


def axpy(alpha: float, x, y) -> np.ndarray:
    """Return ``alpha * x + y`` as a new array."""
    return alpha * np.asarray(x, dtype=np.float64) + np.asarray(y, dtype=np.float64)


def scale(alpha: float, x) -> np.ndarray:
    return alpha * np.asarray(x, dtype=np.float64)


def dense_eigh_spd(a, cap: int = DENSE_CAP, sym_tol: float = 1e-10):
    """Symmetric eigendecomposition by cyclic Jacobi rotations.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns.

    Raises
    ------
    ValueError
        If ``a`` is not square, is larger than ``cap``, or is not symmetric
        to within ``sym_tol`` relative to its largest entry.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("eigensolver needs a square matrix")
    n = a.shape[0]
    if n > cap:
        raise ValueError(f"matrix of size {n} exceeds the dense cap {cap}")
    amax = np.abs(a).max() if a.size else 0.0
    if n and np.abs(a - a.T).max() > sym_tol * max(amax, np.finfo(float).tiny):
        raise ValueError("matrix is not symmetric")
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    a = 0.5 * (a + a.T)
    fro = np.linalg.norm(a)
    w, v, _ = _kernels.jacobi_eigh(a, 1e-12 * fro)
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


class DenseLU:
    """LU factorization with partial pivoting, reusable for many right-hand sides."""

    def __init__(self, a, pivot_tol: float = 1e-14):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError("dense_solve needs a square matrix")
        self.n = a.shape[0]
        amax = np.abs(a).max() if a.size else 0.0
        with warnings.catch_warnings():
            # singularity is reported below with our own tolerance
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            self._lu, self._piv = sla.lu_factor(a, check_finite=True)
        pivots = np.abs(np.diag(self._lu))
        if self.n and (amax == 0.0 or pivots.min() < pivot_tol * amax):
            raise SingularMatrixError(
                f"pivot {pivots.min():.3e} below {pivot_tol:g} * max|entry| ({amax:.3e})"
            )

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise DimensionError(f"rhs length {b.shape[0]} != {self.n}")
        return sla.lu_solve((self._lu, self._piv), b, check_finite=False)


def dense_solve(a, b) -> np.ndarray:
    return DenseLU(a).solve(b)


# --- Matrix Market -------------------------------------------------------


def write_matrix_market(path, a: CsrMatrix) -> None:
    """Write ``a`` in Matrix Market coordinate real general format (1-based)."""
    s = a.to_scipy().tocoo()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{a.nrows} {a.ncols} {a.nnz}\n")
        for i, j, v in zip(s.row, s.col, s.data):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def read_matrix_market(path, symmetric: bool | None = None) -> CsrMatrix:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) < 5 or header[0] != "%%MatrixMarket" or header[2] != "coordinate":
            raise ValueError(f"{path}: not a Matrix Market coordinate file")
        field_, kind = header[3].lower(), header[4].lower()
        if field_ not in ("real", "integer"):
            raise ValueError(f"{path}: unsupported field {field_!r}")
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        nrows, ncols, nnz = (int(t) for t in line.split())
        body = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    if body.shape[0] != nnz:
        raise ValueError(f"{path}: expected {nnz} entries, found {body.shape[0]}")
    rows = body[:, 0].astype(np.int64) - 1
    cols = body[:, 1].astype(np.int64) - 1
    vals = body[:, 2]
    if kind == "symmetric":
        off = rows != cols
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, vals[off]]),
        )
    m = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols))
    if symmetric is None:
        symmetric = kind == "symmetric"
    return CsrMatrix.from_scipy(m, symmetric=symmetric)


# --- Vector batches: JSON header + raw little-endian f64 -------------------


def save_vectors(stem, vectors, **meta) -> None:
    """Write a 2-D batch as ``stem.json`` + ``stem.bin`` (row-major, ``<f8``)."""
    arr = np.ascontiguousarray(np.atleast_2d(np.asarray(vectors, dtype="<f8")))
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    arr.tofile(stem.with_suffix(".bin"))
    header = {"dtype": "<f8", "shape": list(arr.shape), **meta}
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))


def load_vectors(stem) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    arr = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
    return arr.reshape(header["shape"]).astype(np.float64), header
