"""Dense spectral decomposition and functional calculus for symmetric operators."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import gamma as gamma_fn

DENSE_LIMIT = 6000


class SingularityError(ValueError):
    """A spectral function is not finite on some eigenvalue."""


def as_array(op) -> np.ndarray:
    """Dense ndarray view of a SymmetricOperator, sparse matrix or array."""
    if hasattr(op, "matrix"):
        op = op.matrix
    if sp.issparse(op):
        return op.toarray()
    return np.asarray(op)


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    label: str = ""

    @property
    def dimension(self) -> int:
        return self.eigenvalues.size

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def eigendecompose(op, dense_limit: int = DENSE_LIMIT, label: str | None = None) -> SpectralDecomposition:
    M = as_array(op)
    n = M.shape[0]
    if n > dense_limit:
        raise ValueError(
            f"dimension {n} exceeds the dense eigendecomposition limit {dense_limit}")
    M = 0.5 * (M + M.T)
    w, V = sla.eigh(M)
    if label is None:
        label = getattr(op, "label", "")
    return SpectralDecomposition(w, V, label)


def map_eigenvalues(dec: SpectralDecomposition, f: Callable) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        fx = np.asarray(f(dec.eigenvalues), dtype=float)
    if fx.shape == ():
        fx = np.full(dec.dimension, float(fx))
    bad = np.flatnonzero(~np.isfinite(fx))
    if bad.size:
        lam = dec.eigenvalues[bad[0]]
        raise SingularityError(f"function is not finite at eigenvalue {lam:.6g} (index {bad[0]})")
    return fx


def apply_function(dec: SpectralDecomposition, f: Callable) -> np.ndarray:
    """V f(Lambda) V^T, symmetrised."""
    fx = map_eigenvalues(dec, f)
    V = dec.eigenvectors
    out = (V * fx) @ V.T
    return 0.5 * (out + out.T)


def sqrt_decomposition(dec: SpectralDecomposition, clip: float = 1e-12) -> SpectralDecomposition:
    """Decomposition of omega = h^(1/2); round-off negatives above -clip*||h|| are zeroed."""
    lam = dec.eigenvalues
    tol = clip * max(abs(lam[0]), abs(lam[-1]), 1.0)
    if lam[0] < -tol:
        raise ValueError(f"operator is not positive semidefinite: lambda_min = {lam[0]:.3e}")
    return SpectralDecomposition(np.sqrt(np.clip(lam, 0.0, None)), dec.eigenvectors,
                                 f"sqrt({dec.label})")


# ---------------------------------------------------------------------------
# infrared cutoff profile


def _g(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def chi(lam):
    """Smooth step: 0 for lam <= 1, 1 for lam >= 2, C-infinity in between."""
    lam = np.asarray(lam, dtype=float)
    up, down = _g(lam - 1.0), _g(2.0 - lam)
    return up / (up + down)


def cutoff_above(lam, sigma: float):
    """F(lam >= sigma) = chi(lam / sigma)."""
    return chi(np.asarray(lam, dtype=float) / sigma)


def cutoff_below(lam, sigma: float):
    """F(lam <= sigma) = 1 - chi(lam / sigma)."""
    return 1.0 - cutoff_above(lam, sigma)


def dispersion_sigma(lam, sigma: float):
    """omega_sigma as a scalar map: lam*chi(lam/sigma) + sigma*(1 - chi(lam/sigma))."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    lam = np.asarray(lam, dtype=float)
    k = chi(lam / sigma)
    return lam * k + sigma * (1.0 - k)


def ir_dispersion(dec_omega: SpectralDecomposition, sigma: float) -> np.ndarray:
    return apply_function(dec_omega, lambda lam: dispersion_sigma(lam, sigma))


def heat_operator(dec: SpectralDecomposition, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0:
        return np.eye(dec.dimension)
    return apply_function(dec, lambda lam: np.exp(-t * lam))


# ---------------------------------------------------------------------------
# Laplace-transform route to negative powers


def laplace_nodes(beta: float, lam_min: float, lam_max: float, nodes: int = 200,
                  lower: float = 1e-6, upper: float = 50.0, tail_tol: float = 1e-12):
    """Log-spaced t nodes and trapezoid weights for lam^-beta = int t^(beta-1) e^(-t lam) dt / Gamma(beta).

    The lower end is pushed below ``lower / lam_max`` when needed so that the
    neglected piece, about (t0*lam_max)^beta / beta, stays below ``tail_tol``.
    Weights include the Jacobian t of the substitution u = log t.
    """
    t0 = min(lower, (tail_tol * beta) ** (1.0 / beta)) / lam_max
    t1 = upper / lam_min
    u = np.linspace(np.log(t0), np.log(t1), nodes)
    h = u[1] - u[0]
    t = np.exp(u)
    w = np.full(nodes, h)
    w[0] = w[-1] = 0.5 * h
    return t, w * t ** beta / gamma_fn(beta)


def frac_inv_power_quadrature(dec: SpectralDecomposition, beta: float, nodes: int = 200) -> np.ndarray:
    """h^-beta as a quadrature over the heat semigroup e^{-th}."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if dec.lambda_min <= 0:
        raise SingularityError(f"lambda_min = {dec.lambda_min:.3e} <= 0; h^-beta undefined")
    t, w = laplace_nodes(beta, dec.lambda_min, dec.lambda_max, nodes)
    # sum_i w_i e^{-t_i h} shares the eigenbasis of h, so accumulate per eigenvalue
    return apply_function(dec, lambda lam: np.exp(-np.outer(lam, t)) @ w)


def commutator_norm(A, B) -> float:
    """Spectral norm of AB - BA."""
    A, B = as_array(A), as_array(B)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    C = A @ B - B @ A
    return float(np.linalg.norm(C, 2)) if C.size else 0.0


# ---------------------------------------------------------------------------
# entrywise-accurate heat kernel for M-matrices


def heat_kernel_entrywise(op, t: float, offdiag_tol: float = 0.0) -> np.ndarray:
    """e^{-t M} for M with nonpositive off-diagonal entries, accurate entrywise.

    Dense eigendecomposition carries an absolute error near 1e-16 * ||e^{-tM}||,
    which swamps the far tails that kernel-ratio fits divide by.  Here
    M = s I - N with N >= 0, and e^{-tau M} = e^{-tau s} e^{tau N} is summed
    as a Taylor series of nonnegative terms and then squared, so every entry
    keeps a small relative error.
    """
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    M = op.matrix if hasattr(op, "matrix") else op
    M = sp.csr_matrix(M, dtype=float)
    n = M.shape[0]
    if t == 0:
        return np.eye(n)
    diag = M.diagonal()
    off = M - sp.diags(diag)
    if off.nnz and off.data.max() > offdiag_tol:
        raise ValueError("matrix has positive off-diagonal entries; entrywise route needs an M-matrix")
    s = float(diag.max())
    N = (sp.diags(s - diag) - off).tocsr()
    N.data[N.data < 0] = 0.0
    norm = float(np.max(np.asarray(N.sum(axis=1))))
    k = max(0, int(np.ceil(np.log2(max(t * norm, 1e-300) / 0.5))))
    tau = t / 2.0 ** k
    tN = (tau * N).T.tocsr()
    term = np.eye(n)
    E = np.eye(n)
    # sum until every entry has converged relatively; entries first appear at
    # the term whose order equals their graph distance
    for j in range(1, n + 60):
        term = np.asarray(tN @ term.T).T / j
        fresh = np.any((term > 0) & (E == 0))
        E += term
        if not fresh and np.all(term <= 1e-17 * E):
            break
    E *= np.exp(-tau * s)
    for _ in range(k):
        E = E @ E
    return 0.5 * (E + E.T)
