import numpy as np
import pytest
import scipy.sparse as sp

from varnelson.eigensolver import (ConvergenceError, electron_ground_state, ionization_threshold,
                                   lowest_eigenpairs, observables)
from varnelson.fock import build_fock_basis, mode_basis
from varnelson.grid import (CoefficientSpec, assemble_K, assemble_h, bracket, build_grid,
                            gaussian_charge, sample_coefficients)
from varnelson.nelson import assemble_H, coupling_operator
from varnelson.spectral import eigendecompose, sqrt_decomposition


def model(charge=1.0, ne=9, Le=3.0, M=2, N=3):
    spec = CoefficientSpec(mass_decay=(1, 1), rho=gaussian_charge(1.0, 1), charge=charge,
                           W=lambda x: bracket(x) ** 4)
    g = build_grid(1, 6.0, 31)
    co = sample_coefficients(spec, g)
    dw = sqrt_decomposition(eigendecompose(assemble_h(co)))
    modes = mode_basis(dw, M)
    eg = build_grid(1, Le, ne)
    K = assemble_K(sample_coefficients(spec, eg))
    basis = build_fock_basis(M, N)
    return assemble_H(K, modes, coupling_operator(co, dw, modes, eg), basis), K, eg


def test_diagonal_example():
    r = lowest_eigenpairs(sp.diags([3.0, 1.0, 2.0]), k=1)
    assert r.energy == 1.0
    np.testing.assert_array_equal(r.ground_state, [0, 1, 0])


def test_lanczos_agrees_with_dense():
    r = np.random.default_rng(4)
    A = sp.random(500, 500, density=0.02, random_state=r)
    A = (A + A.T + sp.diags(np.linspace(0, 5, 500))).tocsr()
    it = lowest_eigenpairs(A, k=3, tol=1e-10, dense_threshold=100)
    de = np.linalg.eigvalsh(A.toarray())[:3]
    np.testing.assert_allclose(it.eigenvalues, de, atol=1e-9)
    assert np.all(it.residuals <= 1e-10 * np.maximum(1, np.abs(it.eigenvalues)))


def test_seeded_runs_identical():
    A = sp.diags([np.full(2999, -1.0), np.linspace(2, 3, 3000), np.full(2999, -1.0)], [-1, 0, 1])
    a = lowest_eigenpairs(A, k=1, seed=3)
    b = lowest_eigenpairs(A, k=1, seed=3)
    assert a.energy == b.energy and np.array_equal(a.ground_state, b.ground_state)


def test_nonconvergence_reports_residuals():
    A = sp.diags([np.full(2999, -1.0), np.linspace(2, 3, 3000), np.full(2999, -1.0)], [-1, 0, 1])
    with pytest.raises(ConvergenceError) as info:
        lowest_eigenpairs(A, k=1, maxiter=2, tol=1e-14)
    assert "converge" in str(info.value)


def test_bad_arguments():
    with pytest.raises(ValueError):
        lowest_eigenpairs(sp.identity(3), k=0)
    with pytest.raises(ValueError):
        lowest_eigenpairs(sp.identity(3), tol=0)


def test_uncoupled_ground_state_factorizes():
    H, K, eg = model(charge=0.0)
    r = lowest_eigenpairs(H, tol=1e-12)
    eK, phi = electron_ground_state(K)
    assert abs(r.energy - eK) <= 1e-10 * abs(eK)
    obs = observables(r.ground_state, H, phi_K=phi)
    assert obs.vacuum_overlap >= 1 - 1e-10 and obs.mean_number <= 1e-12


def test_observables_on_product_states():
    H, K, eg = model()
    eK, phi = electron_ground_state(K)
    b = H.basis
    psi = np.kron(phi, b.vacuum())
    o = observables(psi, H, phi_K=phi)
    assert o.vacuum_overlap == pytest.approx(1.0) and o.mean_number == 0
    o1 = observables(np.kron(phi, b.ket((0, 1))), H, phi_K=phi)
    assert o1.mean_number == pytest.approx(1.0)
    np.testing.assert_allclose(o1.mode_occupations, [0, 1])
    assert o1.electron_density.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        observables(2 * psi, H)


def test_ionization_threshold():
    H, K, eg = model()
    E = lowest_eigenpairs(H).energy
    sig = ionization_threshold(H, eg, [0.0, 0.5, 1.0, 2.0])
    assert sig[0] == pytest.approx(E, abs=1e-10)
    assert np.all(np.diff(sig) >= -1e-10)
    assert sig[-1] - E > 0
    with pytest.raises(ValueError):
        ionization_threshold(H, eg, [3.0])
    with pytest.raises(ValueError):
        ionization_threshold(H, eg, [-1.0])
