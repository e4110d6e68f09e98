"""Classical (Ruge-Stueben) algebraic multigrid.

Setup is strength graph -> greedy C/F splitting -> direct interpolation ->
Galerkin coarse operator, repeated until the level or size limit. For systems
with several unknowns per node the splitting is done once per node on an
auxiliary scalar matrix (negated Frobenius norms of the nodal blocks) and the
interpolation is built per unknown type.
"""

from __future__ import annotations

import heapq
import json
import logging
import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .report import History
from .smoothers import SmootherConfig, smooth
from .sparse import CsrMatrix, DenseLU, extract_diagonal, galerkin_triple_product

log = logging.getLogger(__name__)


class InterpolationError(ValueError):
    pass


def strength_graph(K: CsrMatrix, theta: float = 0.25) -> CsrMatrix:
    """Strong dependencies: ``S[i, j] = 1`` iff ``-K_ij >= theta * max_{k != i}(-K_ik)``.

    Only negative off-diagonal couplings can be strong.
    """
    a = K.to_scipy().tocoo()
    off = a.row != a.col
    rows, cols, vals = a.row[off], a.col[off], a.data[off]
    neg = np.where(vals < 0, -vals, 0.0)
    rowmax = np.zeros(K.nrows)
    np.maximum.at(rowmax, rows, neg)
    posmax = np.zeros(K.nrows)
    np.maximum.at(posmax, rows, np.where(vals > 0, vals, 0.0))
    if np.any(posmax > rowmax):
        warnings.warn(
            "matrix has rows dominated by positive off-diagonals; "
            "classical strength ignores those couplings",
            stacklevel=2,
        )
    strong = (neg > 0) & (neg >= theta * rowmax[rows])
    s = sp.csr_matrix(
        (np.ones(strong.sum()), (rows[strong], cols[strong])), shape=K.shape
    )
    return CsrMatrix.from_scipy(s)


def cf_split(S: CsrMatrix) -> np.ndarray:
    """Greedy Ruge-Stueben first pass plus F-point repair.

    Returns a boolean array, True for C-points. The candidate with the most
    undecided dependants is picked first; ties go to the lowest index.
    """
    n = S.nrows
    s = S.to_scipy()
    st = s.T.tocsr()  # st[i] = points that strongly depend on i
    lam = np.diff(st.indptr).astype(np.int64)
    UNDECIDED, C, F = 0, 1, 2
    state = np.zeros(n, dtype=np.int8)
    heap = [(-int(lam[i]), i) for i in range(n)]
    heapq.heapify(heap)

    def dependants(i):
        return st.indices[st.indptr[i] : st.indptr[i + 1]]

    def influencers(i):
        return s.indices[s.indptr[i] : s.indptr[i + 1]]

    while heap:
        negl, i = heapq.heappop(heap)
        if state[i] != UNDECIDED or -negl != lam[i]:
            continue
        state[i] = C
        for j in dependants(i):
            if state[j] != UNDECIDED:
                continue
            state[j] = F
            for k in influencers(j):
                if state[k] == UNDECIDED:
                    lam[k] += 1
                    heapq.heappush(heap, (-int(lam[k]), k))
        for k in influencers(i):
            if state[k] == UNDECIDED:
                lam[k] -= 1
                heapq.heappush(heap, (-int(lam[k]), k))
    # every F-point needs a strong C-neighbour
    for i in range(n):
        if state[i] == F and not np.any(state[influencers(i)] == C):
            state[i] = C
    return state == C


def _direct_weights(row_cols, row_vals, i, is_c, strong_set):
    """Classical direct interpolation weights for F-row ``i`` of a scalar block.

    Negative and positive couplings are scaled separately; if the interpolatory
    set has no positive coupling the positive row sum is lumped to the diagonal.
    """
    diag = 0.0
    neg_all = pos_all = 0.0
    interp = []
    for j, v in zip(row_cols, row_vals):
        if j == i:
            diag = v
            continue
        if v < 0:
            neg_all += v
        else:
            pos_all += v
        if is_c[j] and j in strong_set:
            interp.append((j, v))
    if not interp:
        return None
    neg_c = sum(v for _, v in interp if v < 0)
    pos_c = sum(v for _, v in interp if v > 0)
    if pos_c == 0.0:
        diag += pos_all
    alpha = neg_all / neg_c if neg_c != 0.0 else 0.0
    beta = pos_all / pos_c if pos_c != 0.0 else 0.0
    out = []
    for j, v in interp:
        w = -(alpha if v < 0 else beta) * v / diag
        out.append((j, w))
    return out


@dataclass(frozen=True, eq=False)
class DofMap:
    """Node id and unknown type of every dof; nodes are numbered ``0..n_nodes-1``."""

    node: np.ndarray
    kind: np.ndarray

    @classmethod
    def scalar(cls, n: int) -> "DofMap":
        return cls(np.arange(n), np.zeros(n, dtype=np.int64))

    @classmethod
    def blocked(cls, n: int, block: int) -> "DofMap":
        if n % block:
            raise ValueError(f"{n} dofs do not split into blocks of {block}")
        idx = np.arange(n)
        return cls(idx // block, idx % block)

    @property
    def n_nodes(self) -> int:
        return int(self.node.max()) + 1 if len(self.node) else 0

    def restrict(self, keep: np.ndarray) -> "DofMap":
        """Map for the dof subset ``keep`` with nodes renumbered compactly."""
        node = self.node[keep]
        _, compact = np.unique(node, return_inverse=True)
        return DofMap(compact.astype(np.int64), self.kind[keep])


def nodal_matrix(K: CsrMatrix, dofs: DofMap | None = None) -> CsrMatrix:
    """Scalar auxiliary matrix: ``-|K_IJ|_F`` off the diagonal, ``|K_II|_F`` on it."""
    if dofs is None or dofs.n_nodes == K.nrows:
        return K
    a = K.to_scipy().tocoo()
    n = dofs.n_nodes
    sq = sp.csr_matrix((a.data**2, (dofs.node[a.row], dofs.node[a.col])), shape=(n, n))
    sq.sum_duplicates()
    sq.sort_indices()
    fro = np.sqrt(sq.data)
    r = np.repeat(np.arange(n), np.diff(sq.indptr))
    vals = np.where(r == sq.indices, fro, -fro)
    return CsrMatrix.from_scipy(sp.csr_matrix((vals, sq.indices, sq.indptr), shape=(n, n)))


def direct_interpolation(K: CsrMatrix, S: CsrMatrix, is_c, dofs: DofMap | None = None,
                         interp: str = "unknown", return_coarse: bool = False):
    """Prolongation from a node-wise C/F splitting.

    ``S`` and ``is_c`` live on nodes. Every dof of a C-node is a coarse dof.
    With ``interp="unknown"`` an F-dof interpolates from same-type dofs of its
    strong C-neighbours; where that set is empty (or with ``interp="nodal"``)
    the auxiliary-matrix weights are applied to the same-type dofs. A vector
    F-dof left with nothing to interpolate from becomes a coarse dof itself.

    With ``return_coarse=True`` the boolean coarse-dof mask is returned as well.
    """
    is_c = np.asarray(is_c, dtype=bool)
    n = K.nrows
    if dofs is None:
        dofs = DofMap.scalar(n)
    if len(is_c) != dofs.n_nodes:
        raise ValueError(f"splitting covers {len(is_c)} nodes, dof map has {dofs.n_nodes}")
    scalar = dofs.n_nodes == n
    ks = K.to_scipy()
    ss = S.to_scipy()
    aux = ks if scalar else nodal_matrix(K, dofs).to_scipy()
    # dof of (node, kind), -1 when absent
    n_kinds = int(dofs.kind.max()) + 1
    lookup = np.full((dofs.n_nodes, n_kinds), -1, dtype=np.int64)
    lookup[dofs.node, dofs.kind] = np.arange(n)
    coarse = is_c[dofs.node].copy()
    weights = {}
    nodal_cache = {}
    for i in np.flatnonzero(~coarse):
        node, c = int(dofs.node[i]), int(dofs.kind[i])
        strong = set(ss.indices[ss.indptr[node] : ss.indptr[node + 1]].tolist())
        w = None
        if scalar or interp == "unknown":
            lo, hi = ks.indptr[i], ks.indptr[i + 1]
            cols = ks.indices[lo:hi]
            same = dofs.kind[cols] == c
            w = _direct_weights(dofs.node[cols[same]].tolist(), ks.data[lo:hi][same].tolist(),
                                node, is_c, strong)
        if w is None and not scalar:
            if node not in nodal_cache:
                lo, hi = aux.indptr[node], aux.indptr[node + 1]
                nodal_cache[node] = _direct_weights(aux.indices[lo:hi].tolist(),
                                                    aux.data[lo:hi].tolist(), node, is_c, strong)
            nw = nodal_cache[node]
            if nw is not None:
                w = [(j, wj) for j, wj in nw if lookup[j, c] >= 0] or None
        if w is None:
            if scalar:
                raise InterpolationError(f"F-point {node} has no strong C-neighbour")
            coarse[i] = True
            continue
        weights[i] = [(int(lookup[j, c]), wj) for j, wj in w]
    cidx = np.cumsum(coarse) - 1
    rows, cols, vals = [], [], []
    for i in np.flatnonzero(coarse):
        rows.append(i)
        cols.append(cidx[i])
        vals.append(1.0)
    for i, w in weights.items():
        for j, wj in w:
            rows.append(i)
            cols.append(cidx[j])
            vals.append(wj)
    P = CsrMatrix.from_scipy(sp.csr_matrix((vals, (rows, cols)), shape=(n, int(coarse.sum()))))
    return (P, coarse) if return_coarse else P


@dataclass(frozen=True, eq=False)
class Level:
    K: CsrMatrix
    diag: np.ndarray
    P: CsrMatrix | None = None


@dataclass(frozen=True, eq=False)
class MultigridHierarchy:
    """Operators ``K_0 .. K_L`` with prolongations ``P_l`` and a dense coarsest solve."""

    levels: tuple[Level, ...]
    smoother: SmootherConfig = SmootherConfig()
    pre: int = 1
    post: int = 1
    coarse_lu: DenseLU | None = None
    stagnated: bool = False
    setup_time: float = 0.0

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def dims(self) -> list[int]:
        return [lv.K.nrows for lv in self.levels]

    def operator_complexity(self) -> float:
        return sum(lv.K.nnz for lv in self.levels) / self.levels[0].K.nnz

    def summary(self) -> dict:
        return {
            "levels": self.n_levels,
            "dims": self.dims,
            "nnz": [lv.K.nnz for lv in self.levels],
            "operator_complexity": self.operator_complexity(),
            "stagnated": self.stagnated,
            "pre": self.pre,
            "post": self.post,
            "smoother": self.smoother.kind,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def build_hierarchy(
    K: CsrMatrix,
    max_levels: int = 10,
    coarse_cap: int = 64,
    theta: float = 0.25,
    smoother: SmootherConfig = SmootherConfig(),
    pre: int = 1,
    post: int = 1,
    dofs: DofMap | None = None,
    interp: str = "unknown",
) -> MultigridHierarchy:
    """Coarsen until ``max_levels`` levels exist or a level has ``<= coarse_cap`` dofs.

    ``dofs`` groups the unknowns into nodes for vector problems (default: one
    unknown per node). Coarsening that removes less than 5% of the dofs stops
    the build early and sets ``stagnated``. Each coarse operator is checked
    against an independent ``P^T K P`` to 1e-10 relative.
    """
    if max_levels < 1:
        raise ValueError("max_levels must be >= 1")
    t0 = time.perf_counter()
    dofs = DofMap.scalar(K.nrows) if dofs is None else dofs
    levels = []
    A = K
    stagnated = False
    while len(levels) + 1 < max_levels and A.nrows > coarse_cap:
        S = strength_graph(nodal_matrix(A, dofs), theta)
        is_c = cf_split(S)
        P, coarse = direct_interpolation(A, S, is_c, dofs, interp, return_coarse=True)
        if P.ncols > 0.95 * A.nrows:
            stagnated = True
            log.warning("coarsening stagnated at %d dofs; stopping with %d levels", A.nrows, len(levels) + 1)
            break
        Ac = galerkin_triple_product(P, A)
        ps = P.to_scipy()
        ref = (ps.T @ A.to_scipy() @ ps).tocsr()
        err = abs(Ac.to_scipy() - ref).max()
        if err > 1e-10 * max(abs(ref).max(), 1e-300):
            raise ArithmeticError(f"Galerkin product mismatch {err:.3e} at level {len(levels)}")
        levels.append(Level(A, extract_diagonal(A), P))
        A = Ac
        dofs = dofs.restrict(coarse)
    levels.append(Level(A, extract_diagonal(A), None))
    lu = DenseLU(A.toarray())
    return MultigridHierarchy(tuple(levels), smoother, pre, post, lu, stagnated, time.perf_counter() - t0)


def _cycle(h: MultigridHierarchy, lvl: int, f, u, symmetric: bool):
    level = h.levels[lvl]
    if lvl == h.n_levels - 1:
        return h.coarse_lu.solve(f)
    K = level.K
    u = smooth(K, f, u, h.smoother, h.pre, diag=level.diag)
    r = f - K @ u
    P = level.P.to_scipy()
    ec = _cycle(h, lvl + 1, P.T @ r, np.zeros(P.shape[1]), symmetric)
    u = u + P @ ec
    return smooth(K, f, u, h.smoother, h.post, diag=level.diag, reverse=symmetric)


def v_cycle(h: MultigridHierarchy, f, u, symmetric: bool = False) -> np.ndarray:
    """One V-cycle; ``symmetric=True`` post-smooths in reverse order."""
    f = np.asarray(f, dtype=np.float64)
    return _cycle(h, 0, f, np.asarray(u, dtype=np.float64), symmetric)


def amg_solve(h: MultigridHierarchy, f, u0=None, tol: float = 1e-8, max_cycles: int = 500):
    """Repeat V-cycles while the relative residual exceeds ``tol``."""
    K = h.levels[0].K
    f = np.asarray(f, dtype=np.float64)
    u = np.zeros_like(f) if u0 is None else np.array(u0, dtype=np.float64)
    hist = History(np.linalg.norm(f))
    rel = hist.push(np.linalg.norm(f - K @ u))
    k = 0
    while rel > tol and k < max_cycles:
        u = v_cycle(h, f, u)
        rel = hist.push(np.linalg.norm(f - K @ u))
        k += 1
    return u, hist.report(rel <= tol, f"AMG-{h.n_levels}G", h.setup_time)
