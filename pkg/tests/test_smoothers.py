import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pod2g.fixtures import laplacian_1d, random_spd
from pod2g.smoothers import (
    SmootherConfig,
    ZeroDiagonalError,
    gauss_seidel_sweep,
    gs_iteration_matrix,
    iteration_matrix,
    jacobi_iteration_matrix,
    jacobi_sweep,
)
from pod2g.sparse import CsrMatrix


def csr(a):
    return CsrMatrix.from_dense(np.asarray(a, dtype=float))


K3 = csr([[4, -1, 0], [-1, 4, -1], [0, -1, 4]])


def test_forward_sweep_by_hand():
    u = gauss_seidel_sweep(K3, np.array([1.0, 2.0, 3.0]), np.zeros(3))
    assert np.allclose(u, [0.25, 0.5625, 0.890625], rtol=0, atol=1e-15)


def test_backward_sweep_by_hand():
    u = gauss_seidel_sweep(K3, np.array([1.0, 2.0, 3.0]), np.zeros(3), reverse=True)
    assert np.allclose(u, [0.421875, 0.6875, 0.75], rtol=0, atol=1e-15)


def test_sweep_matches_triangular_formula(spd_15, rng):
    K = spd_15.K
    Kd = K.toarray()
    f, u = rng.standard_normal(15), rng.standard_normal(15)
    ref = u + np.linalg.solve(np.tril(Kd), f - Kd @ u)
    assert np.allclose(gauss_seidel_sweep(K, f, u), ref, rtol=1e-12, atol=1e-12)


def test_input_not_modified(lap1d_9):
    u = np.ones(9)
    gauss_seidel_sweep(lap1d_9.K, lap1d_9.f, u, sweeps=3)
    assert np.array_equal(u, np.ones(9))


def test_exact_solution_is_fixed_point(lap1d_9):
    fx = lap1d_9
    for cfg in (SmootherConfig(), SmootherConfig("jacobi")):
        M = iteration_matrix(fx.K, cfg)
        assert np.allclose(M @ np.zeros(9), 0)
    assert np.allclose(gauss_seidel_sweep(fx.K, fx.f, fx.solution, 4), fx.solution, atol=1e-13)
    assert np.allclose(jacobi_sweep(fx.K, fx.f, fx.solution, sweeps=4), fx.solution, atol=1e-13)


@pytest.mark.parametrize("reverse", [False, True])
def test_iteration_matrix_propagates_error(spd_15, rng, reverse):
    fx = spd_15
    u0 = rng.standard_normal(15)
    u1 = gauss_seidel_sweep(fx.K, fx.f, u0, reverse=reverse)
    M = gs_iteration_matrix(fx.K, reverse=reverse)
    assert np.allclose(u1 - fx.solution, M @ (u0 - fx.solution), atol=1e-12)


def test_jacobi_iteration_matrix_propagates_error(spd_15, rng):
    fx = spd_15
    u0 = rng.standard_normal(15)
    u1 = jacobi_sweep(fx.K, fx.f, u0, omega=0.5)
    M = jacobi_iteration_matrix(fx.K, 0.5)
    assert np.allclose(u1 - fx.solution, M @ (u0 - fx.solution), atol=1e-12)


@pytest.mark.parametrize("n", [5, 9, 20])
def test_gs_spectral_radius_laplacian(n):
    M = gs_iteration_matrix(laplacian_1d(n).K)
    rho = np.abs(np.linalg.eigvals(M)).max()
    assert rho == pytest.approx(np.cos(np.pi / (n + 1)) ** 2, rel=1e-8)


@pytest.mark.parametrize("n", [5, 9, 20])
def test_jacobi_spectral_radius_laplacian(n):
    M = jacobi_iteration_matrix(laplacian_1d(n).K, 2.0 / 3.0)
    rho = np.abs(np.linalg.eigvals(M)).max()
    assert rho == pytest.approx(1 - (2.0 / 3.0) * (1 - np.cos(np.pi / (n + 1))), rel=1e-10)


def test_backward_is_energy_adjoint(spd_15):
    K = spd_15.K.toarray()
    Mf = gs_iteration_matrix(spd_15.K)
    Mb = gs_iteration_matrix(spd_15.K, reverse=True)
    assert np.allclose(K @ Mb, Mf.T @ K, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(3, 30), seed=st.integers(0, 10_000))
def test_gs_reduces_energy_error(n, seed):
    fx = random_spd(n, 0.3, seed)
    Kd = fx.K.toarray()
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(n)
    e0 = u - fx.solution
    e1 = gauss_seidel_sweep(fx.K, fx.f, u) - fx.solution
    assert e1 @ Kd @ e1 <= e0 @ Kd @ e0 * (1 + 1e-12)
    rho = np.abs(np.linalg.eigvals(gs_iteration_matrix(fx.K))).max()
    assert rho < 1


def test_zero_diagonal():
    K = csr([[0, 1], [1, 2]])
    with pytest.raises(ZeroDiagonalError):
        gauss_seidel_sweep(K, np.ones(2), np.zeros(2))
    with pytest.raises(ZeroDiagonalError):
        gs_iteration_matrix(K)


def test_dense_cap():
    with pytest.raises(ValueError, match="cap"):
        gs_iteration_matrix(laplacian_1d(20).K, cap=10)


@pytest.mark.parametrize("kw", [{"kind": "sor"}, {"sweeps": -1}, {"omega": 0.0}, {"omega": 1.5}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SmootherConfig(**kw)


def test_zero_sweeps_is_identity(lap1d_9, rng):
    u = rng.standard_normal(9)
    assert np.array_equal(gauss_seidel_sweep(lap1d_9.K, lap1d_9.f, u, sweeps=0), u)
