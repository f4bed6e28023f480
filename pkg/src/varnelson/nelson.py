"""Coupling operator and the composite Hamiltonian on electron grid x Fock space.

The electron index is the outer (slow) index of composite vectors, so a
state is stored as ``psi.reshape(n_electron, fock_dim)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fock import FockBasis, ModeBasis, creation, second_quantize
from .grid import CoefficientSet, Grid
from .spectral import SingularityError, SpectralDecomposition, chi, dispersion_sigma

NORM_EXPONENTS = (0.5, 1.0, 1.5)


def translated_charges(coeffs: CoefficientSet, electron_grid: Grid) -> np.ndarray:
    """rho(x - X) on boson nodes x for every electron node X, shape (n_boson, n_electron).

    Nearest-node lookup into the sampled (origin-centred) rho; points that
    fall outside the boson box contribute zero.
    """
    bgrid = coeffs.grid
    n, d, dx, L = bgrid.n_per_axis, bgrid.dim, bgrid.spacing, bgrid.extent
    x = bgrid.points
    X = electron_grid.points
    rho = coeffs.rho.reshape((n,) * d)
    out = np.zeros((bgrid.size, electron_grid.size))
    for e in range(electron_grid.size):
        y = x - X[e]
        idx = np.rint((y + L) / dx - 1.0).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < n), axis=1)
        if np.any(inside):
            out[inside, e] = rho[tuple(idx[inside].T)]
    return out


@dataclass(frozen=True)
class CouplingOperator:
    """g[m, X] = <mode_m, omega^{-1/2} rho_X> plus untruncated norms ||omega^{-beta} rho_X||."""

    g: np.ndarray
    column_norms: dict
    electron_grid: Grid

    @property
    def n_electron(self) -> int:
        return self.g.shape[1]


def coupling_operator(coeffs: CoefficientSet, dec_omega: SpectralDecomposition,
                      modes: ModeBasis, electron_grid: Grid,
                      exponents=NORM_EXPONENTS, sigma: Optional[float] = None) -> CouplingOperator:
    """Coupling matrix and column norms; ``sigma`` applies the infrared cutoff chi(omega/sigma)."""
    omega = dec_omega.eigenvalues
    rho_X = translated_charges(coeffs, electron_grid)
    vol = coeffs.grid.cell_volume
    if not np.any(rho_X):
        zeros = np.zeros(electron_grid.size)
        return CouplingOperator(np.zeros((modes.M, electron_grid.size)),
                                {b: zeros.copy() for b in exponents}, electron_grid)
    if omega[0] < 1e-12:
        raise SingularityError(f"lambda_min(omega) = {omega[0]:.3e} < 1e-12; omega^(-1/2) undefined")
    # grid vectors are function values; continuum inner products carry dx^d,
    # l2-normalised eigenvectors carry dx^(-d/2)
    proj_modes = modes.vectors.T @ rho_X
    proj_all = dec_omega.eigenvectors.T @ rho_X
    if sigma is not None:
        _check_sigma(sigma)
        proj_modes = proj_modes * chi(modes.energies / sigma)[:, None]
        proj_all = proj_all * chi(omega / sigma)[:, None]
    g = modes.energies[:, None] ** -0.5 * proj_modes * np.sqrt(vol)
    norms = {b: np.sqrt(vol * np.sum(omega[:, None] ** (-2 * b) * proj_all ** 2, axis=0))
             for b in exponents}
    return CouplingOperator(g, norms, electron_grid)


@dataclass(frozen=True)
class CompositeHamiltonian:
    """H = K x 1 + 1 x dGamma(omega) + sum_X |X><X| x phi(g(., X))."""

    K: sp.csr_matrix
    energies: np.ndarray
    g: np.ndarray
    basis: FockBasis
    label: str = "H"
    meta: dict = field(default_factory=dict)

    @property
    def n_electron(self) -> int:
        return self.K.shape[0]

    @property
    def dim(self) -> int:
        return self.n_electron * self.basis.dim

    @cached_property
    def electron_part(self) -> sp.csr_matrix:
        return sp.kron(self.K, sp.identity(self.basis.dim), format="csr")

    @cached_property
    def field_part(self) -> sp.csr_matrix:
        return sp.kron(sp.identity(self.n_electron), second_quantize(self.energies, self.basis),
                       format="csr")

    @cached_property
    def coupling_part(self) -> sp.csr_matrix:
        out = sp.csr_matrix((self.dim, self.dim))
        for m in range(self.basis.M):
            if not np.any(self.g[m]):
                continue
            ad = creation(m, self.basis)
            phi_m = (ad + ad.T) / np.sqrt(2.0)
            out = out + sp.kron(sp.diags(self.g[m]), phi_m, format="csr")
        return out.tocsr()

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        M = self.electron_part + self.field_part + self.coupling_part
        M = (0.5 * (M + M.T)).tocsr()
        M.sum_duplicates()
        return M

    def uncoupled(self) -> "CompositeHamiltonian":
        return replace(self, g=np.zeros_like(self.g), label=self.label + "_0")


def assemble_H(K, modes: ModeBasis, coupling: CouplingOperator, basis: FockBasis) -> CompositeHamiltonian:
    Kmat = sp.csr_matrix(K.matrix if hasattr(K, "matrix") else K)
    g = np.asarray(coupling.g if hasattr(coupling, "g") else coupling, dtype=float)
    if modes.M != basis.M or g.shape[0] != basis.M:
        raise ValueError(f"mode count mismatch: modes {modes.M}, basis {basis.M}, coupling {g.shape[0]}")
    if g.shape[1] != Kmat.shape[0]:
        raise ValueError(f"coupling has {g.shape[1]} electron columns, K has dimension {Kmat.shape[0]}")
    return CompositeHamiltonian(Kmat, np.asarray(modes.energies, dtype=float), g, basis)


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")


def assemble_H_sigma(H: CompositeHamiltonian, sigma: float) -> CompositeHamiltonian:
    """Infrared-cut coupling v_sigma = chi(omega/sigma) v; dispersion unchanged."""
    _check_sigma(sigma)
    scale = chi(H.energies / sigma)
    return replace(H, g=H.g * scale[:, None], label=f"H_sigma({sigma:g})",
                   meta={**H.meta, "sigma": sigma})


def assemble_H_tilde_sigma(H: CompositeHamiltonian, sigma: float) -> CompositeHamiltonian:
    """As assemble_H_sigma, and mode energies replaced by omega_sigma >= sigma."""
    cut = assemble_H_sigma(H, sigma)
    return replace(cut, energies=dispersion_sigma(H.energies, sigma),
                   label=f"H~_sigma({sigma:g})")


@dataclass(frozen=True)
class IRNorm:
    beta: float
    norm: float
    singular_values: np.ndarray
    sup_column: float


def ir_norm(coupling: CouplingOperator, K, beta: float, top: int = 20) -> IRNorm:
    """Norm and leading singular values of omega^{-beta} v (K+1)^{-1/2}.

    v maps u(X) to omega^{-1/2} rho_X u(X), so the columns of omega^{-beta} v
    are omega^{-beta-1/2} rho_X and the operator is diagonal in X up to the
    (K+1)^{-1/2} factor.  Its singular values are those of
    diag(||omega^{-beta-1/2} rho_X||) (K+1)^{-1/2}.
    """
    if beta not in (0.5, 1.0):
        raise ValueError(f"beta must be 1/2 or 1, got {beta}")
    col = np.asarray(coupling.column_norms[beta + 0.5])
    Kd = np.asarray(K.matrix.toarray() if hasattr(K, "matrix") else
                    (K.toarray() if sp.issparse(K) else K), dtype=float)
    w, V = np.linalg.eigh(0.5 * (Kd + Kd.T))
    if w[0] <= -1.0:
        raise ValueError("K + 1 is not positive")
    Kinv_half = (V * (w + 1.0) ** -0.5) @ V.T
    s = np.linalg.svd(col[:, None] * Kinv_half, compute_uv=False)
    return IRNorm(beta, float(s[0]) if s.size else 0.0, s[:top], float(col.max()))


# ---------------------------------------------------------------------------
# matrix-free norms for grids beyond the dense limit


def _lanczos_quadratic_form(A, b: np.ndarray, f, tol: float = 1e-10, max_steps: int = 400) -> float:
    """Gauss quadrature estimate of b^T f(A) b from a fully reorthogonalised Lanczos run.

    Stops when two successive estimates agree to ``tol`` (relative).
    """
    nb = float(np.linalg.norm(b))
    if nb == 0:
        return 0.0
    n = b.size
    steps = min(max_steps, n)
    Q = np.zeros((n, steps))
    alpha = np.zeros(steps)
    beta = np.zeros(steps)
    q = b / nb
    prev = None
    for j in range(steps):
        Q[:, j] = q
        w = A @ q
        alpha[j] = q @ w
        for _ in range(2):
            w -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ w)
        theta, S = sla.eigh_tridiagonal(alpha[:j + 1], beta[:j]) if j else (alpha[:1], np.ones((1, 1)))
        est = nb ** 2 * float(np.sum(S[0] ** 2 * f(theta)))
        if prev is not None and abs(est - prev) <= tol * abs(est):
            return est
        prev = est
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-14 * nb:
            return est
        q = w / beta[j]
    return prev


def charge_norm(h, rho_X: np.ndarray, exponent: float, cell_volume: float) -> float:
    """||omega^-exponent rho_X||_{L^2} = (rho^T h^-exponent rho dx^d)^(1/2) without diagonalising h.

    exponent 1/2 and 1 use sparse solves; other exponents use Lanczos quadrature.
    """
    A = sp.csc_matrix(h.matrix if hasattr(h, "matrix") else h)
    rho_X = np.asarray(rho_X, dtype=float)
    if not np.any(rho_X):
        return 0.0
    if exponent == 1.0:
        val = float(rho_X @ spla.spsolve(A, rho_X))
    elif exponent == 2.0:
        u = spla.spsolve(A, rho_X)
        val = float(u @ u)
    else:
        val = _lanczos_quadratic_form(A, rho_X, lambda lam: lam ** -exponent)
    return float(np.sqrt(max(val, 0.0) * cell_volume))
