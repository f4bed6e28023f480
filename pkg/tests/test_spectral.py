import mpmath
import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from varnelson.grid import CoefficientSpec, assemble_h, build_grid, sample_coefficients
from varnelson.spectral import (SingularityError, SpectralDecomposition, apply_function, chi,
                                commutator_norm, cutoff_above, cutoff_below, dispersion_sigma,
                                eigendecompose, frac_inv_power_quadrature, heat_kernel_entrywise,
                                heat_operator, ir_dispersion, sqrt_decomposition)


def spd(n, seed):
    r = np.random.default_rng(seed)
    A = r.standard_normal((n, n))
    return A @ A.T + n * np.eye(n)


def h_1d(n=60, L=10.0):
    return assemble_h(sample_coefficients(CoefficientSpec(mass_decay=(1, 1)), build_grid(1, L, n)))


def test_eigendecompose_identity_and_closed_form():
    assert np.allclose(eigendecompose(np.eye(4)).eigenvalues, 1)
    lap = np.array([[2, -1, 0], [-1, 2, -1], [0, -1, 2]], float)
    np.testing.assert_allclose(eigendecompose(lap).eigenvalues, [2 - np.sqrt(2), 2, 2 + np.sqrt(2)])


def test_eigendecompose_refuses_large():
    with pytest.raises(ValueError, match="limit 5"):
        eigendecompose(np.eye(6), dense_limit=5)


def test_apply_function_identity_and_sqrt():
    A = spd(20, 1)
    dec = eigendecompose(A)
    np.testing.assert_allclose(apply_function(dec, lambda x: x), A, rtol=1e-8)
    R = apply_function(dec, np.sqrt)
    np.testing.assert_allclose(R @ R, A, rtol=1e-10)
    np.testing.assert_allclose(R, sla.sqrtm(A).real, rtol=1e-9)


def test_apply_function_singularity_named():
    dec = SpectralDecomposition(np.array([0.0, 1.0]), np.eye(2))
    with pytest.raises(SingularityError, match="0"):
        apply_function(dec, lambda x: x ** -0.5)


def test_chi_profile():
    x = np.linspace(-1, 4, 501)
    c = chi(x)
    assert np.all(c[x <= 1] == 0) and np.all(c[x >= 2] == 1)
    assert np.all(np.diff(c) >= 0)
    np.testing.assert_allclose(cutoff_above(x, 0.5) + cutoff_below(x, 0.5), 1.0)


@given(st.floats(min_value=1e-3, max_value=10), st.floats(min_value=0, max_value=50))
def test_dispersion_sigma_bounds(sigma, lam):
    w = float(dispersion_sigma(lam, sigma))
    assert w >= min(lam, sigma) - 1e-12
    assert w >= sigma - 1e-12 or lam >= sigma
    if lam >= 2 * sigma:
        assert w == lam
    if lam <= sigma:
        assert w == sigma


def test_ir_dispersion_exact_below_half_gap():
    dec_w = sqrt_decomposition(eigendecompose(h_1d()))
    om = apply_function(dec_w, lambda x: x)
    assert np.array_equal(ir_dispersion(dec_w, dec_w.lambda_min / 2.1), om)


def test_heat_operator_matches_expm():
    A = h_1d(30).toarray()
    dec = eigendecompose(A)
    np.testing.assert_allclose(heat_operator(dec, 0.0), np.eye(30), atol=1e-12)
    np.testing.assert_allclose(heat_operator(dec, 0.7), sla.expm(-0.7 * A), atol=1e-13)
    with pytest.raises(ValueError):
        heat_operator(dec, -1.0)


@pytest.mark.parametrize("t", [0.05, 0.7, 5.0])
def test_entrywise_heat_kernel_against_high_precision(t):
    n = 25
    M = np.diag(2 + np.arange(n) / n) - np.eye(n, k=1) - np.eye(n, k=-1)
    mpmath.mp.dps = 80
    E = mpmath.expm(mpmath.matrix((-t * M).tolist()))
    exact = np.array([[float(E[i, j]) for j in range(n)] for i in range(n)])
    approx = heat_kernel_entrywise(M, t)
    assert np.max(np.abs(approx - exact) / exact) < 1e-13


def test_entrywise_heat_kernel_rejects_positive_offdiagonal():
    with pytest.raises(ValueError):
        heat_kernel_entrywise(np.array([[1.0, 0.5], [0.5, 1.0]]), 1.0)


def test_quadrature_scalar_case():
    dec = eigendecompose(np.diag([1.0, 4.0]))
    np.testing.assert_allclose(frac_inv_power_quadrature(dec, 0.5), np.diag([1, 0.5]), atol=1e-6)


@pytest.mark.parametrize("beta", [0.5, 1.0, 1.5])
def test_quadrature_matches_direct_calculus(beta):
    for dec in (eigendecompose(spd(30, 7)), eigendecompose(h_1d())):
        Q = frac_inv_power_quadrature(dec, beta)
        D = apply_function(dec, lambda x: x ** -beta)
        assert np.linalg.norm(Q - D, 2) / np.linalg.norm(D, 2) <= 1e-6


def test_quadrature_rejects_singular():
    with pytest.raises(SingularityError):
        frac_inv_power_quadrature(SpectralDecomposition(np.array([0.0, 1.0]), np.eye(2)), 1.0)


def test_commutator_norm_trivial_cases():
    A = spd(8, 3)
    assert commutator_norm(A, A) <= 1e-12
    assert commutator_norm(np.diag([1, 2.0]), np.diag([3, 4.0])) == 0.0
    B = np.array([[0, 1], [1, 0.0]])
    assert commutator_norm(np.diag([1.0, -1.0]), B) == pytest.approx(2.0)
