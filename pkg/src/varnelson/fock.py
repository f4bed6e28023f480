"""Bosonic Fock space truncated by total particle number.

States are occupation tuples ``(n_1, ..., n_M)`` with ``sum(n) <= N_max``,
ordered by total number and then in descending lexicographic order, so for
``M = 2, N_max = 2`` the basis is ``00, 10, 01, 20, 11, 02``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np
import scipy.sparse as sp

DIM_LIMIT = 200_000


@dataclass(frozen=True)
class ModeBasis:
    """The lowest ``M`` eigenmodes of omega, energies ascending."""

    energies: np.ndarray
    vectors: np.ndarray  # (n_grid, M), orthonormal columns

    @property
    def M(self) -> int:
        return self.energies.size


def mode_basis(dec_omega, M: int) -> ModeBasis:
    if not 1 <= M <= dec_omega.dimension:
        raise ValueError(f"M must lie in [1, {dec_omega.dimension}], got {M}")
    return ModeBasis(np.array(dec_omega.eigenvalues[:M]), np.array(dec_omega.eigenvectors[:, :M]))


def _compositions(total: int, parts: int):
    """All tuples of ``parts`` nonnegative ints summing to ``total``, descending lex."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


class FockBasis:
    def __init__(self, M: int, N_max: int, dim_limit: int = DIM_LIMIT):
        if M < 1:
            raise ValueError(f"M must be >= 1, got {M}")
        if N_max < 0:
            raise ValueError(f"N_max must be >= 0, got {N_max}")
        dim = comb(M + N_max, N_max)
        if dim > dim_limit:
            raise ValueError(f"Fock dimension C({M}+{N_max}, {N_max}) = {dim} exceeds limit {dim_limit}")
        self.M = M
        self.N_max = N_max
        self.states = [s for k in range(N_max + 1) for s in _compositions(k, M)]
        self.index = {s: i for i, s in enumerate(self.states)}

    @property
    def dim(self) -> int:
        return len(self.states)

    @cached_property
    def occupations(self) -> np.ndarray:
        return np.array(self.states, dtype=np.int64).reshape(self.dim, self.M)

    @cached_property
    def totals(self) -> np.ndarray:
        return self.occupations.sum(axis=1)

    def vacuum(self) -> np.ndarray:
        v = np.zeros(self.dim)
        v[0] = 1.0
        return v

    def ket(self, occupation) -> np.ndarray:
        v = np.zeros(self.dim)
        v[self.index[tuple(occupation)]] = 1.0
        return v

    def __repr__(self):
        return f"FockBasis(M={self.M}, N_max={self.N_max}, dim={self.dim})"


def build_fock_basis(M: int, N_max: int, dim_limit: int = DIM_LIMIT) -> FockBasis:
    return FockBasis(M, N_max, dim_limit)


def creation(mode: int, basis: FockBasis) -> sp.csr_matrix:
    """a*_mode with hard truncation: transitions out of the N_max shell are dropped."""
    if not 0 <= mode < basis.M:
        raise IndexError(f"mode {mode} out of range for M = {basis.M}")
    occ = basis.occupations
    src = np.flatnonzero(basis.totals < basis.N_max)
    rows = np.empty(src.size, dtype=np.int64)
    for k, i in enumerate(src):
        target = list(basis.states[i])
        target[mode] += 1
        rows[k] = basis.index[tuple(target)]
    vals = np.sqrt(occ[src, mode] + 1.0)
    return sp.csr_matrix((vals, (rows, src)), shape=(basis.dim, basis.dim))


def annihilation(mode: int, basis: FockBasis) -> sp.csr_matrix:
    return creation(mode, basis).T.tocsr()


def field_op(f, basis: FockBasis) -> sp.csr_matrix:
    """Segal field phi(f) = (a*(f) + a(f)) / sqrt(2) with a*(f) = sum_m f_m a*_m."""
    f = np.asarray(f)
    if f.shape != (basis.M,):
        raise ValueError(f"coefficient vector has shape {f.shape}, expected ({basis.M},)")
    dtype = complex if np.iscomplexobj(f) else float
    out = sp.csr_matrix((basis.dim, basis.dim), dtype=dtype)
    for m, fm in enumerate(f):
        if fm == 0:
            continue
        ad = creation(m, basis)
        out = out + fm * ad + np.conj(fm) * ad.T
    return (out / np.sqrt(2.0)).tocsr()


def second_quantize(b_diag, basis: FockBasis) -> sp.csr_matrix:
    """dGamma(b) for b diagonal in the mode basis: entry sum_m n_m b_m."""
    b = np.asarray(b_diag, dtype=float)
    if b.shape != (basis.M,):
        raise ValueError(f"b has shape {b.shape}, expected ({basis.M},)")
    return sp.diags(basis.occupations @ b).tocsr()


def number_operator(basis: FockBasis) -> sp.csr_matrix:
    return second_quantize(np.ones(basis.M), basis)
