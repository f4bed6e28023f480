"""Cartesian grids, coefficient sampling and finite-difference assembly.

All operators act on the interior nodes of the cube ``[-L, L]^d`` with
homogeneous Dirichlet data on the boundary.  Node values are function
values, so a grid vector ``u`` represents a function with
``||u||_{L^2}^2 = sum(u**2) * dx**d``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

FieldFn = Callable[[np.ndarray], np.ndarray]


class HypothesisError(ValueError):
    """A coefficient field violates a structural hypothesis (ellipticity, charge)."""


class HypothesisWarning(UserWarning):
    pass


def bracket(x):
    """Japanese bracket <x> = (1 + |x|^2)^(1/2); ``x`` has coordinates on the last axis."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return np.sqrt(1.0 + x * x)
    return np.sqrt(1.0 + np.sum(x * x, axis=-1))


@dataclass(frozen=True)
class Grid:
    dim: int
    extent: float
    n_per_axis: int

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / (self.n_per_axis + 1)

    @property
    def axis(self) -> np.ndarray:
        return -self.extent + (np.arange(self.n_per_axis) + 1) * self.spacing

    @property
    def size(self) -> int:
        return self.n_per_axis ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def points(self) -> np.ndarray:
        """Node coordinates, shape (size, dim), C order (last axis fastest)."""
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)


def build_grid(dim: int, extent: float, n_per_axis: int) -> Grid:
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if not extent > 0:
        raise ValueError(f"extent must be positive, got {extent}")
    if int(n_per_axis) != n_per_axis or n_per_axis < 2:
        raise ValueError(f"n_per_axis must be an integer >= 2, got {n_per_axis}")
    return Grid(int(dim), float(extent), int(n_per_axis))


# ---------------------------------------------------------------------------
# coefficients


@dataclass
class CoefficientSpec:
    """Closed-form coefficient fields, each a function of node coordinates (N, d).

    ``a`` and ``A`` may return shape (N,) for an isotropic metric or (N, d, d).
    Either ``mass`` is given or ``mass_decay = (amplitude, exponent)`` for
    ``m(x) = amplitude * <x>^(-exponent)``.
    """

    a: FieldFn = lambda x: np.ones(len(x))
    c: FieldFn = lambda x: np.ones(len(x))
    mass: Optional[FieldFn] = None
    mass_decay: Optional[tuple[float, float]] = None
    A: FieldFn = lambda x: np.ones(len(x))
    W: FieldFn = lambda x: np.zeros(len(x))
    rho: FieldFn = lambda x: np.zeros(len(x))
    # normalise the sampled charge to this value; None keeps the raw samples
    charge: Optional[float] = None
    decay_metadata: dict = field(default_factory=dict)

    def mass_fn(self) -> FieldFn:
        if self.mass is not None:
            return self.mass
        if self.mass_decay is not None:
            amp, p = self.mass_decay
            return lambda x: amp * bracket(x) ** (-p)
        return lambda x: np.zeros(len(x))


def gaussian_charge(width: float, dim: int) -> FieldFn:
    norm = (2.0 * np.pi * width ** 2) ** (-dim / 2.0)
    return lambda x: norm * np.exp(-np.sum(x * x, axis=-1) / (2.0 * width ** 2))


@dataclass
class CoefficientSet:
    grid: Grid
    a: np.ndarray  # (N, d, d)
    c: np.ndarray
    m: np.ndarray
    A: np.ndarray  # (N, d, d)
    W: np.ndarray
    rho: np.ndarray
    C0: float
    C1: float
    mass_decay: Optional[tuple[float, float]] = None
    decay_metadata: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def charge(self) -> float:
        return float(self.rho.sum() * self.grid.cell_volume)

    @property
    def is_diagonal(self) -> bool:
        d = self.grid.dim
        off = ~np.eye(d, dtype=bool)
        return not np.any(self.a[:, off])


def _metric_field(values, n: int, d: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = np.full(n, float(values))
    if values.ndim == 1:
        out = np.zeros((n, d, d))
        idx = np.arange(d)
        out[:, idx, idx] = values[:, None]
        return out
    if values.shape != (n, d, d):
        raise ValueError(f"metric field has shape {values.shape}, expected {(n, d, d)}")
    return 0.5 * (values + np.swapaxes(values, 1, 2))


def _scalar_field(values, n: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        return np.full(n, float(values))
    return values.reshape(n)


def _ellipticity(name: str, eig: np.ndarray) -> tuple[float, float]:
    bad = np.flatnonzero(eig <= 0)
    if bad.size:
        i = int(bad[0])
        raise HypothesisError(
            f"{name} is not uniformly elliptic: value {eig[i]:.6g} <= 0 at node {i}")
    return float(eig.min()), float(eig.max())


def sample_coefficients(spec: CoefficientSpec, grid: Grid) -> CoefficientSet:
    """Sample ``spec`` at the grid nodes and check the ellipticity hypotheses.

    ``C0``/``C1`` are the extreme eigenvalues of ``a`` and the extreme values of
    ``c`` over all nodes.  The electron metric ``A`` is checked separately.
    """
    x = grid.points
    n, d = x.shape
    a = _metric_field(spec.a(x), n, d)
    c = _scalar_field(spec.c(x), n)
    m = _scalar_field(spec.mass_fn()(x), n)
    A = _metric_field(spec.A(x), n, d)
    W = _scalar_field(spec.W(x), n)
    rho = _scalar_field(spec.rho(x), n)

    eig_a = np.linalg.eigvalsh(a)
    lo_a, _ = _ellipticity("a", eig_a.min(axis=1))
    hi_a = float(eig_a.max())
    lo_c, hi_c = _ellipticity("c", c)
    _ellipticity("A", np.linalg.eigvalsh(A).min(axis=1))
    if np.any(m < 0):
        i = int(np.flatnonzero(m < 0)[0])
        raise HypothesisError(f"mass m(x) is negative ({m[i]:.6g}) at node {i}")
    if np.any(rho < 0):
        i = int(np.flatnonzero(rho < 0)[0])
        raise HypothesisError(f"charge density rho is negative at node {i}")

    q = rho.sum() * grid.cell_volume
    if spec.charge is not None:
        if spec.charge == 0:
            rho = np.zeros(n)
        elif q == 0:
            raise HypothesisError("total charge q = 0; cannot normalise rho")
        else:
            rho = rho * (spec.charge / q)
        q = rho.sum() * grid.cell_volume
    notes = []
    if q == 0:
        # rho = 0 is the uncoupled model; kept usable but recorded
        notes.append("total charge q = 0 (uncoupled model)")
        logger.info("sample_coefficients: q = 0")

    return CoefficientSet(
        grid=grid, a=a, c=c, m=m, A=A, W=W, rho=rho,
        C0=min(lo_a, lo_c), C1=max(hi_a, hi_c),
        mass_decay=spec.mass_decay, decay_metadata=dict(spec.decay_metadata),
        notes=notes)


def require_charge(coeffs: CoefficientSet) -> None:
    if coeffs.charge == 0:
        raise HypothesisError("total charge q = sum(rho) dx^d is zero")


# ---------------------------------------------------------------------------
# assembly


@dataclass(frozen=True)
class SymmetricOperator:
    matrix: sp.csr_matrix
    grid: Grid
    label: str
    notes: tuple = ()

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True)
class WeightedOperator:
    """Operator that is symmetric for <u, v> = sum(u * v * weight) dx^d."""

    matrix: sp.csr_matrix
    weight: np.ndarray
    grid: Grid
    label: str


def _difference_1d(n: int, dx: float):
    """Forward differences node -> face, shape (n+1, n), Dirichlet ends."""
    D = sp.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n))
    return D.tocsr() / dx


def _central_1d(n: int, dx: float):
    return sp.diags([np.ones(n - 1), -np.ones(n - 1)], [1, -1], shape=(n, n)).tocsr() / (2 * dx)


def _along_axis(op1d, axis: int, grid: Grid):
    n, d = grid.n_per_axis, grid.dim
    eye = sp.identity(n, format="csr")
    out = None
    for k in range(d):
        factor = op1d if k == axis else eye
        out = factor if out is None else sp.kron(out, factor, format="csr")
    return out


def _face_average(values: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """Midpoint average of node values onto the faces normal to ``axis``.

    Boundary faces take the value of their single interior neighbour.
    """
    n, d = grid.n_per_axis, grid.dim
    v = values.reshape((n,) * d)
    v = np.moveaxis(v, axis, 0)
    pad = np.concatenate([v[:1], v, v[-1:]], axis=0)
    faces = 0.5 * (pad[1:] + pad[:-1])
    return np.moveaxis(faces, 0, axis).ravel()


def divergence_form(metric: np.ndarray, grid: Grid) -> sp.csr_matrix:
    """Symmetric positive matrix for -sum_jk d_j metric^{jk} d_k."""
    n, d, dx = grid.n_per_axis, grid.dim, grid.spacing
    total = sp.csr_matrix((grid.size, grid.size))
    for j in range(d):
        Dj = _along_axis(_difference_1d(n, dx), j, grid)
        aj = _face_average(metric[:, j, j], j, grid)
        total = total + Dj.T @ sp.diags(aj) @ Dj
    for j in range(d):
        for k in range(d):
            if j == k or not np.any(metric[:, j, k]):
                continue
            Gj = _along_axis(_central_1d(n, dx), j, grid)
            Gk = _along_axis(_central_1d(n, dx), k, grid)
            total = total + Gj.T @ sp.diags(metric[:, j, k]) @ Gk
    return total.tocsr()


def _symmetrize(M) -> sp.csr_matrix:
    M = sp.csr_matrix(M)
    out = (0.5 * (M + M.T)).tocsr()
    out.sum_duplicates()
    out.eliminate_zeros()
    return out


def assemble_h(coeffs: CoefficientSet, grid: Optional[Grid] = None) -> SymmetricOperator:
    """h = -sum c^-1 d_j a^{jk} d_k c^-1 + m^2 as a sparse symmetric matrix."""
    grid = grid or coeffs.grid
    L = divergence_form(coeffs.a, grid)
    cinv = sp.diags(1.0 / coeffs.c)
    M = cinv @ L @ cinv + sp.diags(coeffs.m ** 2)
    return SymmetricOperator(_symmetrize(M), grid, "h")


def assemble_K(coeffs: CoefficientSet, grid: Optional[Grid] = None) -> SymmetricOperator:
    """K = sum D_j A^{jk} D_k + W on the (electron) grid."""
    grid = grid or coeffs.grid
    M = divergence_form(coeffs.A, grid) + sp.diags(coeffs.W)
    notes = []
    W = coeffs.W
    if W.min() < 0 and np.isclose(W.min(), W[_outer_shell(grid)].min()):
        msg = ("W attains its negative minimum on the outermost nodes; "
               "it may be unbounded below")
        warnings.warn(msg, HypothesisWarning, stacklevel=2)
        notes.append(msg)
    return SymmetricOperator(_symmetrize(M), grid, "K", tuple(notes))


def _outer_shell(grid: Grid) -> np.ndarray:
    r = np.abs(grid.points).max(axis=1)
    return np.isclose(r, r.max())


def assemble_laplacian(grid: Grid) -> SymmetricOperator:
    """The discrete Dirichlet -Laplacian."""
    metric = _metric_field(np.ones(grid.size), grid.size, grid.dim)
    return SymmetricOperator(_symmetrize(divergence_form(metric, grid)), grid, "laplacian")


def gauge_transform(h: SymmetricOperator, coeffs: CoefficientSet) -> WeightedOperator:
    """Conjugate by u -> c^-1 u: returns c^-1 h c, symmetric for the c^2 weight."""
    c = coeffs.c
    M = (sp.diags(1.0 / c) @ h.matrix @ sp.diags(c)).tocsr()
    return WeightedOperator(M, c ** 2, h.grid, h.label + "~")


def write_triplets(op, path) -> None:
    """Dump a matrix as ``row col value`` lines (debug format)."""
    M = sp.coo_matrix(op.matrix if hasattr(op, "matrix") else op)
    with open(path, "w") as fh:
        for i, j, v in zip(M.row, M.col, M.data):
            fh.write(f"{i} {j} {v:.17e}\n")
