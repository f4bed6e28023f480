"""Lowest eigenpairs of sparse symmetric matrices and ground-state diagnostics."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

DENSE_FALLBACK = 2000


class ConvergenceError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool

    @property
    def energy(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def ground_state(self) -> np.ndarray:
        return self.eigenvectors[:, 0]


def _as_operator(H):
    if hasattr(H, "matrix"):
        H = H.matrix
    return H


def _fix_sign(V: np.ndarray) -> np.ndarray:
    # deterministic phase: largest-magnitude entry of each vector positive
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def lowest_eigenpairs(H, k: int = 1, tol: float = 1e-10, seed: int = 0,
                      dense_threshold: int = DENSE_FALLBACK, maxiter: int | None = None) -> EigenResult:
    """k smallest eigenpairs; dense below ``dense_threshold``, Lanczos (ARPACK) above.

    Every returned pair satisfies ``||H psi - E psi|| <= tol * max(1, |E|)``,
    otherwise ConvergenceError is raised with the residuals attached.
    """
    A = _as_operator(H)
    n = A.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    iterations = 0
    if n < dense_threshold or k >= n - 1:
        M = A.toarray() if sp.issparse(A) else np.asarray(A)
        w, V = sla.eigh(0.5 * (M + M.T), subset_by_index=[0, k - 1])
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(n)
        maxiter = maxiter or max(1000, 20 * n)
        try:
            w, V = spla.eigsh(A, k=k, which="SA", v0=v0, tol=tol * 1e-2, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(f"ARPACK did not converge: {exc}") from exc
        order = np.argsort(w)
        w, V = w[order], V[:, order]
        # ARPACK vectors are orthonormal only to ~tol; one Rayleigh-Ritz pass tightens both
        Q, _ = np.linalg.qr(V)
        w, S = np.linalg.eigh(Q.T @ (A @ Q))
        V = Q @ S
        iterations = maxiter
    V = _fix_sign(V / np.linalg.norm(V, axis=0))
    res = np.linalg.norm(A @ V - V * w, axis=0)
    ok = res <= tol * np.maximum(1.0, np.abs(w))
    if not np.all(ok):
        raise ConvergenceError(f"residuals {res} exceed tol {tol}", residuals=res)
    return EigenResult(w, V, res, iterations, True)


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class GroundStateObservables:
    energy: float
    vacuum_overlap: float
    mean_number: float
    mode_occupations: np.ndarray
    electron_density: np.ndarray


def electron_ground_state(K) -> tuple[float, np.ndarray]:
    r = lowest_eigenpairs(_as_operator(K), k=1, tol=1e-12)
    return r.energy, r.ground_state


def observables(psi: np.ndarray, H, phi_K: np.ndarray | None = None,
                energy: float | None = None) -> GroundStateObservables:
    """Diagnostics of a normalised composite state for a CompositeHamiltonian ``H``."""
    psi = np.asarray(psi)
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError(f"state is not normalised (norm {nrm:.12g})")
    basis = H.basis
    Psi = psi.reshape(H.n_electron, basis.dim)
    if phi_K is None:
        _, phi_K = electron_ground_state(H.K)
    overlap = abs(np.vdot(phi_K, Psi[:, 0]))
    fock_weight = np.sum(np.abs(Psi) ** 2, axis=0)
    occupations = fock_weight @ basis.occupations
    density = np.sum(np.abs(Psi) ** 2, axis=1)
    if energy is None:
        energy = float(np.real(np.vdot(psi, _as_operator(H) @ psi)))
    return GroundStateObservables(float(energy), float(min(overlap, 1.0)),
                                  float(occupations.sum()), occupations, density)


# ---------------------------------------------------------------------------
# ionization threshold


def ionization_threshold(H, electron_grid, R_list, tol: float = 1e-10, seed: int = 0) -> np.ndarray:
    """Lowest energy of H restricted to states vanishing on electron nodes |X| < R.

    R = 0 imposes no restriction.  Restriction deletes the corresponding
    rows and columns of the composite matrix.
    """
    A = _as_operator(H).tocsr()
    fock_dim = A.shape[0] // electron_grid.size
    radius = electron_grid.radius
    out = []
    for R in R_list:
        if R < 0:
            raise ValueError(f"R must be nonnegative, got {R}")
        if R >= electron_grid.extent:
            raise ValueError(f"R = {R} is not inside the electron domain (extent {electron_grid.extent})")
        keep_e = np.flatnonzero(radius >= R)
        keep = (keep_e[:, None] * fock_dim + np.arange(fock_dim)).ravel()
        sub = A[keep][:, keep]
        out.append(lowest_eigenpairs(sub, k=1, tol=tol, seed=seed).energy)
    return np.array(out)
