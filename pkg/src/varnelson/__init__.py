"""Finite-dimensional toolkit for the Nelson model with variable coefficients.

Subpackages by layer: :mod:`grid` (discretization), :mod:`spectral`
(functional calculus), :mod:`fock`, :mod:`nelson` (composite Hamiltonian),
:mod:`eigensolver`, :mod:`bounds` (heat-kernel and operator checks) and the
experiment layer :mod:`config`, :mod:`results`, :mod:`experiments`, :mod:`cli`.
"""

__version__ = "0.1.0"
