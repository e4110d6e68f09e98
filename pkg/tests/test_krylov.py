import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pod2g.amg import amg_solve, build_hierarchy
from pod2g.fixtures import laplacian_1d, laplacian_2d, random_spd
from pod2g.krylov import (
    AmgPreconditioner,
    BreakdownError,
    DensePreconditioner,
    FactorizationError,
    IChol0,
    ILU0,
    Jacobi,
    Preconditioner,
    amg_preconditioned_pcg,
    cg_solve,
    pcg_solve,
)
from pod2g.problems import ParametricProblem
from pod2g.sparse import CsrMatrix

KERSHAW_OFF = np.array([[0, -2, 0, 2], [-2, 0, -2, 0], [0, -2, 0, -2], [2, 0, -2, 0.0]])


def kershaw(t):
    """SPD for t < 1.5 but IC(0) breaks down near t = 1."""
    return CsrMatrix.from_dense(3 * np.eye(4) + t * KERSHAW_OFF)


class TestCG:
    @pytest.mark.parametrize("n", [10, 30])
    def test_finite_termination(self, n):
        fx = laplacian_1d(n)
        u, rep = cg_solve(fx.K, fx.f, tol=1e-10)
        assert rep.converged and rep.iterations <= n
        assert np.allclose(u, fx.solution, atol=1e-8)

    def test_orthogonality_and_conjugacy(self):
        fx = laplacian_1d(20)
        Kd = fx.K.toarray()
        _, rep = cg_solve(fx.K, fx.f, tol=1e-10, record=True)
        R = np.array(rep.residuals[:10])
        Pm = np.array(rep.directions[:10])
        G = R @ R.T
        assert np.abs(G - np.diag(np.diag(G))).max() <= 1e-10 * np.diag(G).max()
        H = Pm @ Kd @ Pm.T
        assert np.abs(H - np.diag(np.diag(H))).max() <= 1e-10 * np.diag(H).max()

    def test_energy_error_decreases(self, spd_15):
        fx = spd_15
        Kd = fx.K.toarray()
        _, rep = cg_solve(fx.K, fx.f, tol=1e-12, record=True)
        e = [(u - fx.solution) @ Kd @ (u - fx.solution) for u in rep.iterates]
        assert all(b <= a * (1 + 1e-10) + 1e-25 for a, b in zip(e, e[1:]))

    def test_zero_rhs(self):
        fx = laplacian_1d(5)
        u, rep = cg_solve(fx.K, np.zeros(5))
        assert rep.iterations == 0 and rep.converged and not np.any(u)

    def test_iteration_limit(self):
        fx = laplacian_2d(12)
        _, rep = cg_solve(fx.K, fx.f, tol=1e-12, max_iter=3)
        assert not rep.converged and rep.iterations == 3

    def test_indefinite_breakdown(self):
        K = CsrMatrix.from_dense(np.diag([1.0, -1.0]))
        with pytest.raises(BreakdownError):
            cg_solve(K, np.array([0.0, 1.0]))


class TestPCG:
    def test_identity_matches_cg(self, spd_15):
        fx = spd_15
        _, a = cg_solve(fx.K, fx.f, tol=1e-10, record=True)
        _, b = pcg_solve(fx.K, fx.f, Preconditioner(), tol=1e-10, record=True)
        assert a.iterations == b.iterations
        assert np.allclose(np.array(a.iterates), np.array(b.iterates), atol=1e-12)
        assert np.allclose(a.residual_history, b.residual_history, rtol=1e-10)

    def test_exact_preconditioner_one_step(self, spd_15):
        u, rep = pcg_solve(spd_15.K, spd_15.f, DensePreconditioner(spd_15.K), tol=1e-10)
        assert rep.iterations == 1
        assert np.allclose(u, spd_15.solution, atol=1e-10)

    def test_jacobi_on_diagonal_one_step(self):
        K = CsrMatrix.from_dense(np.diag([1.0, 4.0, 9.0]))
        _, rep = pcg_solve(K, np.array([1.0, 1.0, 1.0]), Jacobi(K), tol=1e-12)
        assert rep.iterations == 1

    @pytest.mark.parametrize("make", [ILU0, IChol0])
    def test_incomplete_factors_exact_on_tridiagonal(self, make):
        fx = laplacian_1d(30)
        _, rep = pcg_solve(fx.K, fx.f, make(fx.K), tol=1e-10)
        assert rep.iterations == 1

    def test_iteration_ordering_laplacian(self):
        fx = laplacian_2d(12)
        its = {T.name: pcg_solve(fx.K, fx.f, T, tol=1e-8)[1].iterations
               for T in (Preconditioner(), Jacobi(fx.K), ILU0(fx.K), IChol0(fx.K))}
        _, rep = amg_preconditioned_pcg(fx.K, fx.f, build_hierarchy(fx.K, coarse_cap=10))
        assert its == {"Identity": 38, "Jacobi": 38, "ILU0": 16, "IChol0": 16}
        assert rep.iterations == 7 and rep.converged

    def test_amg_preconditioner_name(self):
        h = build_hierarchy(laplacian_1d(50).K, coarse_cap=10)
        assert AmgPreconditioner(h).name == "AMG-4G"

    def test_non_spd_preconditioner(self, lap1d_9):
        class Negative(Preconditioner):
            def apply(self, r):
                return -r

        with pytest.raises(BreakdownError):
            pcg_solve(lap1d_9.K, lap1d_9.f, Negative())

    def test_starting_guess(self, lap1d_9):
        u, rep = pcg_solve(lap1d_9.K, lap1d_9.f, u0=lap1d_9.solution)
        assert rep.iterations == 0

    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(4, 40), seed=st.integers(0, 1000))
    def test_solution_accuracy(self, n, seed):
        fx = random_spd(n, 0.2, seed)
        for T in (Jacobi(fx.K), IChol0(fx.K)):
            u, rep = pcg_solve(fx.K, fx.f, T, tol=1e-10)
            assert rep.converged
            assert np.linalg.norm(fx.f - fx.K @ u) <= 1e-10 * np.linalg.norm(fx.f)


class TestFactorizations:
    def test_ilu0_reproduces_pattern(self, lap2d_12):
        K = lap2d_12.K
        L, U = ILU0(K).factors()
        Kd = K.toarray()
        mask = Kd != 0
        assert np.allclose((L @ U)[mask], Kd[mask], atol=1e-12)
        assert not np.any(np.tril(L, -1)[~mask]) and not np.any(U[~mask])

    def test_ichol0_reproduces_pattern(self, lap2d_12):
        K = lap2d_12.K
        ic = IChol0(K)
        L = ic.factor()
        Kd = K.toarray()
        mask = Kd != 0
        assert ic.shift == 0.0
        assert np.allclose((L @ L.T)[mask], Kd[mask], atol=1e-12)

    def test_ichol0_shift_recovers(self):
        assert IChol0(kershaw(0.8)).shift == 0.0
        assert IChol0(kershaw(0.9)).shift == 0.1

    def test_ichol0_gives_up(self):
        with pytest.raises(FactorizationError, match="IC"):
            IChol0(kershaw(1.0))

    def test_ilu0_zero_pivot(self):
        K = CsrMatrix.from_dense(np.array([[1.0, 1.0], [1.0, 1.0]]))
        with pytest.raises(FactorizationError, match="pivot"):
            ILU0(K)

    def test_jacobi_rejects_nonpositive_diagonal(self):
        with pytest.raises(FactorizationError):
            Jacobi(CsrMatrix.from_dense(np.array([[1.0, 0.5], [0.5, -1.0]])))


@pytest.mark.parametrize("tol", [1e-6, 1e-8])
def test_amg_pcg_beats_standalone_amg_on_elasticity(tol):
    p = ParametricProblem.its(9)
    a = p.assemble(p.mean_params())
    h = build_hierarchy(a.K, dofs=a.dofs, coarse_cap=20)
    _, pcg = amg_preconditioned_pcg(a.K, a.f, h, tol=tol)
    _, standalone = amg_solve(h, a.f, tol=tol, max_cycles=2000)
    assert pcg.converged and pcg.iterations <= standalone.iterations
