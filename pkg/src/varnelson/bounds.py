"""Numerical checks of heat-kernel and operator lower bounds for h.

Every check returns a :class:`BoundReport`.  Fitted constants are exact
maxima of ratios over the sampled parameter grid, so they are the smallest
constants for which the inequality holds on that grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import CoefficientSet, Grid, assemble_laplacian, bracket, gauge_transform
from .spectral import (SingularityError, SpectralDecomposition, apply_function,
                       chi, commutator_norm, heat_kernel_entrywise, heat_operator)

logger = logging.getLogger(__name__)

UNDERFLOW = 1e-300


@dataclass
class BoundReport:
    name: str
    rows: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    worst: dict = field(default_factory=dict)
    stability: Optional[float] = None
    passed: bool = True
    tolerance: str = ""
    notes: list = field(default_factory=list)

    def summary_line(self) -> str:
        consts = ", ".join(f"{k}={v:.6g}" for k, v in self.constants.items())
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {consts} [{self.tolerance}]"


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def _argmax2(M: np.ndarray):
    i, j = np.unravel_index(np.argmax(M), M.shape)
    return int(i), int(j)


# ---------------------------------------------------------------------------
# weights


def psi(alpha: float, t, x):
    """psi_alpha(t, x) = (<x>^2 / (<x>^2 + t))^alpha; ``x`` has coordinates on the last axis."""
    b2 = bracket(x) ** 2
    return (b2 / (b2 + np.asarray(t, dtype=float))) ** alpha


def weight_log_derivative(alpha: float, s: float, x: np.ndarray) -> np.ndarray:
    """b_j = psi^-1 d_j psi = 2 alpha s x_j <x>^-2 (<x>^2 + s)^-1, shape (N, d)."""
    x = np.atleast_2d(x)
    b2 = bracket(x) ** 2
    return 2.0 * alpha * s * x / (b2 * (b2 + s))[:, None]


def fit_log_derivative_constant(alpha: float, s_list, grid: Grid) -> float:
    """Smallest C with |b_j(x; s, alpha)| <= C alpha <x>^-1 on the grid, over s."""
    x = grid.points
    br = bracket(x)
    worst = 0.0
    for s in s_list:
        b = np.abs(weight_log_derivative(alpha, s, x))
        worst = max(worst, float(np.max(b * br[:, None] / alpha)))
    return worst


# ---------------------------------------------------------------------------
# kernels


def _heat(src, t: float) -> np.ndarray:
    """e^{-t h} from a decomposition (dense eig) or from the operator itself.

    Operators go through the entrywise-accurate series, which keeps far
    Gaussian tails accurate to relative precision; dense eigendecomposition
    only resolves entries down to ~1e-16 absolute, which ruins kernel ratios.
    """
    if isinstance(src, SpectralDecomposition):
        return heat_operator(src, t)
    return heat_kernel_entrywise(src, t)


def _dimension(src) -> int:
    if isinstance(src, SpectralDecomposition):
        return src.dimension
    return (src.matrix if hasattr(src, "matrix") else src).shape[0]


def kernel_matrix(dec: SpectralDecomposition, t: float, grid: Grid) -> np.ndarray:
    """Continuum-normalised heat kernel K(x_i, x_j) = (e^{-th})_ij / dx^d."""
    return heat_operator(dec, t) / grid.cell_volume


def semigroup_defect(dec: SpectralDecomposition, t: float, s: float) -> float:
    """max |e^{-(t+s)h} - e^{-th} e^{-sh}|."""
    return float(np.max(np.abs(heat_operator(dec, t + s) - heat_operator(dec, t) @ heat_operator(dec, s))))


def check_positivity(dec: SpectralDecomposition, t_list, tol: float = 1e-12) -> BoundReport:
    rep = BoundReport("positivity", tolerance=f"min entry >= -{tol:g}")
    worst = np.inf
    for t in t_list:
        E = heat_operator(dec, t)
        i, j = np.unravel_index(np.argmin(E), E.shape)
        off = E[~np.eye(E.shape[0], dtype=bool)]
        rep.rows.append({"t": t, "min_entry": float(E[i, j]),
                         "min_offdiag": float(off.min()) if off.size else 0.0})
        if E[i, j] < worst:
            worst = float(E[i, j])
            rep.worst = {"t": t, "i": int(i), "j": int(j), "value": worst}
    rep.constants["min_entry"] = worst
    rep.passed = worst >= -tol
    return rep


def check_trotter_domination(dec_h, dec_h0, t_list, tol: float = 1e-12) -> BoundReport:
    """e^{-th} <= e^{-th0} entrywise when h = h0 + v with v >= 0.

    Accepts decompositions or (M-matrix) operators.
    """
    rep = BoundReport("trotter_domination", tolerance=f"max(e^-th - e^-th0) <= {tol:g}")
    worst = -np.inf
    for t in t_list:
        D = _heat(dec_h, t) - _heat(dec_h0, t)
        i, j = _argmax2(D)
        rep.rows.append({"t": t, "max_excess": float(D[i, j])})
        if D[i, j] > worst:
            worst = float(D[i, j])
            rep.worst = {"t": t, "i": i, "j": j, "value": worst}
    rep.constants["max_excess"] = worst
    rep.passed = worst <= tol
    return rep


def _ratio_max(num: np.ndarray, den: np.ndarray):
    """max num/den over entries with den above underflow; returns (max, (i,j), excluded)."""
    mask = den > UNDERFLOW
    excluded = int(mask.size - mask.sum())
    ratio = np.full(num.shape, -np.inf)
    ratio[mask] = num[mask] / den[mask]
    i, j = _argmax2(ratio)
    return float(ratio[i, j]), (i, j), excluded


def fit_gaussian_domination(dec_h, dec_lap, t_list, c_list, grid: Grid,
                            max_excluded: float = 0.01) -> BoundReport:
    """C(c) = max_{t,x,y} K_h(t,x,y) / K_lap(ct,x,y); reports the smallest C over c.

    ``dec_h`` and ``dec_lap`` may be decompositions or operators; operators
    are preferred because the ratio reaches into far kernel tails.
    """
    rep = BoundReport("gaussian_domination",
                      tolerance=f"excluded underflow pairs <= {max_excluded:.0%}")
    n_pairs = _dimension(dec_h) ** 2
    heat = {t: _heat(dec_h, t) for t in t_list}
    best = (np.inf, None)
    total_excluded = 0
    for c in c_list:
        C_c, excl_c, where = -np.inf, 0, None
        for t in t_list:
            r, ij, excl = _ratio_max(heat[t], _heat(dec_lap, c * t))
            excl_c += excl
            if r > C_c:
                C_c, where = r, {"t": t, "c": c, "i": ij[0], "j": ij[1]}
        frac = excl_c / (n_pairs * len(t_list))
        rep.rows.append({"c": c, "C": C_c, "excluded_fraction": frac})
        total_excluded = max(total_excluded, frac)
        if C_c < best[0]:
            best = (C_c, c)
            rep.worst = where
    rep.constants = {"C": best[0], "c": best[1]}
    rep.passed = bool(np.isfinite(best[0])) and total_excluded <= max_excluded
    if total_excluded > max_excluded:
        rep.notes.append(f"excluded fraction {total_excluded:.3%} above cap")
    return rep


def _weighted_constants(heat_h, heat_lap, t_list, alpha, grid):
    x = grid.points
    d = grid.dim
    C_main, C_heat, where = -np.inf, -np.inf, None
    excluded = 0
    for t in t_list:
        w = psi(alpha, t, x)
        W = np.outer(w, w)
        r, ij, excl = _ratio_max(heat_h[t], W * heat_lap[t])
        excluded += excl
        if r > C_main:
            C_main, where = r, {"t": t, "i": ij[0], "j": ij[1]}
        K = heat_h[t] / grid.cell_volume
        C_heat = max(C_heat, float(np.max(K / (t ** (-d / 2.0) * W))))
    return C_main, C_heat, where, excluded


def fit_weighted_domination(dec_h, dec_lap, t_list, grid: Grid, a: float, c: float = 1.0,
                            shrink: float = 0.8, settle: float = 0.05, max_steps: int = 40,
                            alpha: Optional[float] = None) -> BoundReport:
    """Fit C in  K_h(t,x,y) <= C psi_a(t,x) psi_a(t,y) K_lap(ct,x,y)  and in
    K_h(t,x,y) <= C t^{-d/2} psi_a(t,x) psi_a(t,y).

    Starting from alpha0 = sqrt(a) the exponent is multiplied by ``shrink``
    until the Gaussian-form constant changes by less than ``settle``
    (relative) between steps.  Pass ``alpha`` to evaluate a fixed exponent.
    """
    rep = BoundReport("weighted_domination", tolerance=f"C settles within {settle:.0%} as alpha shrinks")
    heat_h = {t: _heat(dec_h, t) for t in t_list}
    heat_lap = {t: _heat(dec_lap, c * t) for t in t_list}
    if alpha is not None:
        alphas = [alpha]
    else:
        alphas = [np.sqrt(a) * shrink ** k for k in range(max_steps)]
    prev = None
    for al in alphas:
        C_main, C_heat, where, excl = _weighted_constants(heat_h, heat_lap, t_list, al, grid)
        rep.rows.append({"alpha": al, "C": C_main, "C_heat": C_heat, "excluded": excl})
        rep.constants = {"alpha": al, "C": C_main, "C_heat": C_heat, "c": c}
        rep.worst = where or {}
        if prev is not None and abs(prev - C_main) <= settle * C_main:
            break
        prev = C_main
    else:
        if alpha is None:
            rep.passed = False
            rep.notes.append("C did not settle")
    rep.passed = rep.passed and bool(np.isfinite(rep.constants["C"]))
    return rep


def ultracontractivity_constant(dec: SpectralDecomposition, t_list, grid: Grid,
                                rel: float = 1e-8) -> BoundReport:
    """c_t = max_x ||K(x, .)||_{L^2}; checks max K(t) <= c_{t/2}^2 and c_t nonincreasing."""
    d = grid.dim
    rep = BoundReport("ultracontractivity", tolerance=f"max K_t <= c_(t/2)^2 (1+{rel:g})")

    def c_of(t):
        E = heat_operator(dec, t)
        return float(np.sqrt(np.max(np.sum(E * E, axis=1))) / np.sqrt(grid.cell_volume))

    ok = True
    prev = np.inf
    monotone = True
    scaled = []
    for t in sorted(t_list):
        ct = c_of(t)
        kmax = float(np.max(kernel_matrix(dec, t, grid)))
        chalf = c_of(t / 2.0)
        ok &= kmax <= chalf ** 2 * (1 + rel)
        monotone &= ct <= prev * (1 + 1e-12)
        prev = ct
        scaled.append(ct * t ** (d / 4.0))
        rep.rows.append({"t": t, "c_t": ct, "c_t_scaled": scaled[-1],
                         "kernel_max": kmax, "c_half_sq": chalf ** 2})
    rep.constants = {"sup_c_t_scaled": max(scaled)}
    rep.passed = bool(ok and monotone and np.isfinite(max(scaled)))
    if not monotone:
        rep.notes.append("c_t not nonincreasing")
    return rep


# ---------------------------------------------------------------------------
# weight conditions, dissipativity


def admissible_epsilon(alpha: float, d: int) -> float:
    return d / (d + 4.0 * alpha)


def check_weight_conditions(alpha: float, eps: float, s_list, grid: Grid,
                            c: Optional[np.ndarray] = None, slope_slack: float = 0.1) -> BoundReport:
    """(a) sup of psi^-eps outside Omega^s <= 2^(alpha eps);
    (b) log-log slope of ||psi^-eps||_{L^q(Omega^s)}^q in s <= d/2 + slack."""
    d = grid.dim
    if not 0 < eps < admissible_epsilon(alpha, d):
        raise ValueError(f"eps = {eps} outside (0, d/(d+4 alpha)) = (0, {admissible_epsilon(alpha, d):.6g})")
    q = 2.0 / (1.0 - eps)
    j = d / 2.0
    x = grid.points
    b2 = bracket(x) ** 2
    weight = np.ones(grid.size) if c is None else np.asarray(c) ** 2
    rep = BoundReport("weight_conditions", tolerance=f"(a) <= 2^(alpha eps)+1e-12, (b) slope <= {j}+{slope_slack}")
    bound_a = 2.0 ** (alpha * eps)
    sup_a = 0.0
    ss, integrals = [], []
    for s in s_list:
        inside = b2 <= s
        vals = psi(alpha, s, x) ** (-eps)
        out = vals[~inside]
        sup_s = float(out.max()) if out.size else 0.0
        sup_a = max(sup_a, sup_s)
        integral = float(np.sum(vals[inside] ** q * weight[inside]) * grid.cell_volume)
        rep.rows.append({"s": s, "sup_outside": sup_s, "lq_norm_q": integral,
                         "nodes_inside": int(inside.sum())})
        if integral > 0:
            ss.append(s)
            integrals.append(integral)
    slope = loglog_slope(ss, integrals) if len(ss) >= 2 else 0.0
    rep.constants = {"sup_outside": sup_a, "bound_a": bound_a, "slope": slope, "j": j}
    rep.passed = sup_a <= bound_a + 1e-12 and slope <= j + slope_slack
    return rep


def _conjugated(h, coeffs: CoefficientSet, alpha: float, s: float):
    """h*_psi = psi^-1 (c^-1 h c) psi and the c^2 weight."""
    gt = gauge_transform(h, coeffs)
    w = psi(alpha, s, coeffs.grid.points)
    A = (sp.diags(1.0 / w) @ gt.matrix @ sp.diags(w)).tocsr()
    return A, gt.weight, w


def weight_potential(h, coeffs: CoefficientSet, alpha: float, s: float) -> np.ndarray:
    """Discrete w = (h*_psi 1): the zeroth-order part of the conjugated operator."""
    A, _, _ = _conjugated(h, coeffs, alpha, s)
    return np.asarray(A.sum(axis=1)).ravel()


def _symmetric_part_min(h, coeffs, alpha, s) -> float:
    A, weight, _ = _conjugated(h, coeffs, alpha, s)
    B = (sp.diags(weight) @ A).toarray()
    return float(sla.eigvalsh(0.5 * (B + B.T), subset_by_index=[0, 0])[0])


def is_admissible(h, coeffs: CoefficientSet, alpha: float, s: float, tol: float = 0.0) -> bool:
    """w >= 0 at every node and Re<f, h*_psi f> >= 0 (symmetric part positive)."""
    if np.min(weight_potential(h, coeffs, alpha, s)) < -tol:
        return False
    return _symmetric_part_min(h, coeffs, alpha, s) >= -tol


def largest_admissible_alpha(h, coeffs: CoefficientSet, s: float, alpha_hi: float,
                             iters: int = 40) -> float:
    """Bisection for the largest alpha in (0, alpha_hi] that is admissible."""
    if is_admissible(h, coeffs, alpha_hi, s):
        return alpha_hi
    lo, hi = 0.0, alpha_hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if is_admissible(h, coeffs, mid, s):
            lo = mid
        else:
            hi = mid
    return lo


def truncate_unit(f: np.ndarray) -> np.ndarray:
    """f_wedge = (|f| ^ 1) sgn f, with sgn 0 = 0."""
    mag = np.abs(f)
    out = np.array(f, copy=True)
    big = mag > 1.0
    out[big] = f[big] / mag[big]
    return out


def dissipativity_form(A, weight: np.ndarray, f: np.ndarray, cell_volume: float = 1.0) -> float:
    """Re <f - f_wedge, A f> for the weighted inner product sum(conj(u) v weight) dx^d."""
    g = f - truncate_unit(f)
    return float(np.real(np.vdot(g, weight * (A @ f))) * cell_volume)


def dissipativity_check(h, coeffs: CoefficientSet, s: float, samples: int = 100,
                        alpha: Optional[float] = None, alpha_hi: Optional[float] = None,
                        seed: int = 0, scale: float = 2.0, rel_tol: float = 1e-10) -> BoundReport:
    """Evaluate Re<f - f_wedge, h*_psi f> on seeded random complex f.

    The exponent defaults to the largest admissible alpha found by bisection
    below ``alpha_hi`` (default sqrt(a) from the declared mass decay).
    """
    rep = BoundReport("dissipativity", tolerance=f"value >= -{rel_tol:g} ||f||^2")
    if alpha is None:
        if alpha_hi is None:
            amp = coeffs.mass_decay[0] if coeffs.mass_decay else 1.0
            alpha_hi = np.sqrt(amp ** 2)
        alpha = largest_admissible_alpha(h, coeffs, s, alpha_hi)
        if alpha <= 0:
            w = weight_potential(h, coeffs, 1e-6, s)
            node = int(np.argmin(w))
            rep.passed = False
            rep.worst = {"node": node, "w": float(w[node])}
            rep.notes.append("no admissible alpha")
            return rep
    A, weight, _ = _conjugated(h, coeffs, alpha, s)
    rng = np.random.default_rng(seed)
    vol = coeffs.grid.cell_volume
    n = coeffs.grid.size
    worst = np.inf
    for k in range(samples):
        f = scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        val = dissipativity_form(A, weight, f, vol)
        fn2 = float(np.sum(np.abs(f) ** 2 * weight) * vol)
        rep.rows.append({"sample": k, "value": val, "norm_sq": fn2})
        if val / fn2 < worst:
            worst = val / fn2
            rep.worst = {"sample": k, "value": val}
    rep.constants = {"alpha": alpha, "s": s, "min_ratio": worst,
                     "w_min": float(np.min(weight_potential(h, coeffs, alpha, s)))}
    rep.passed = worst >= -rel_tol
    return rep


# ---------------------------------------------------------------------------
# operator lower bounds


def weighted_top_eigenvalue(op_inv: np.ndarray, weight: np.ndarray) -> float:
    """lambda_max(W^-1/2 op W^-1/2) for a diagonal weight W."""
    s = weight ** -0.5
    M = op_inv * np.outer(s, s)
    return float(sla.eigvalsh(0.5 * (M + M.T), subset_by_index=[M.shape[0] - 1] * 2)[0])


def frac_power_constant(dec_h: SpectralDecomposition, grid: Grid, beta: float, eps: float) -> float:
    """Smallest C with h^-beta <= C <x>^(2 beta + eps) on the grid."""
    if beta == 0:
        return weighted_top_eigenvalue(np.eye(grid.size), bracket(grid.points) ** eps)
    if dec_h.lambda_min <= 0:
        raise SingularityError(f"h is singular (lambda_min = {dec_h.lambda_min:.3e})")
    hb = apply_function(dec_h, lambda lam: lam ** -beta)
    return weighted_top_eigenvalue(hb, bracket(grid.points) ** (2 * beta + eps))


def _ratio_report(name, params, values, max_ratio, tolerance=None):
    rep = BoundReport(name, tolerance=tolerance or f"successive ratio <= {max_ratio}")
    for p, v in zip(params, values):
        rep.rows.append({**p, "C": v})
    ratios = [values[k + 1] / values[k] for k in range(len(values) - 1)]
    rep.stability = max(ratios) if ratios else 1.0
    rep.constants = {"C_max": max(values), "max_ratio": rep.stability}
    rep.passed = bool(np.all(np.isfinite(values))) and rep.stability <= max_ratio
    return rep


def check_frac_power_bound(cases: Sequence[tuple[Grid, SpectralDecomposition]], beta: float,
                           eps: float, max_ratio: float = 1.2) -> BoundReport:
    """h^-beta <= C <x>^(2 beta + eps) across growing boxes; ``cases`` sorted by extent."""
    if beta < 0 or not eps > 0:
        raise ValueError("need beta >= 0 and eps > 0")
    values = [frac_power_constant(dec, grid, beta, eps) for grid, dec in cases]
    params = [{"L": grid.extent, "n": grid.n_per_axis, "beta": beta, "eps": eps} for grid, _ in cases]
    rep = _ratio_report("frac_power_bound", params, values, max_ratio)
    d = cases[0][0].dim
    if beta > d / 2.0:
        rep.notes.append("beta > d/2: outside the proven range")
    return rep


def sobolev_constant(grid: Grid, gamma: float, delta: float, dense_limit: int = 6000) -> float:
    """lambda_max(W^-1/2 (-Delta)^-gamma W^-1/2), W = <x>^(2 delta).

    For gamma = 1 this is 1 / lambda_min(W^1/2 (-Delta) W^1/2), a sparse problem.
    """
    lap = assemble_laplacian(grid).matrix
    w = bracket(grid.points) ** (2 * delta)
    if gamma == 0:
        return float(np.max(1.0 / w))
    if gamma == 1:
        s = sp.diags(np.sqrt(w))
        B = (s @ lap @ s).tocsc()
        if grid.size <= 2000:
            lam = sla.eigvalsh(B.toarray(), subset_by_index=[0, 0])[0]
        else:
            lam = spla.eigsh(B, k=1, sigma=0.0, which="LM", v0=np.ones(grid.size))[0][0]
        return float(1.0 / lam)
    if grid.size > dense_limit:
        raise ValueError(f"grid size {grid.size} exceeds dense limit for gamma = {gamma}")
    from .spectral import eigendecompose
    dec = eigendecompose(lap)
    return weighted_top_eigenvalue(apply_function(dec, lambda lam: lam ** -gamma), w)


def check_sobolev_bound(gamma: float, delta: float, grids: Sequence[Grid],
                        max_ratio: float = 1.2) -> BoundReport:
    d = grids[0].dim
    if not gamma < d / 2.0:
        raise ValueError(f"gamma = {gamma} must be < d/2 = {d / 2}")
    values = [sobolev_constant(g, gamma, delta) for g in grids]
    params = [{"L": g.extent, "n": g.n_per_axis, "gamma": gamma, "delta": delta} for g in grids]
    rep = _ratio_report("sobolev_bound", params, values, max_ratio)
    rep.name = "sobolev_bound"
    if delta <= gamma:
        rep.notes.append("outside lemma hypotheses (delta <= gamma)")
    return rep


# ---------------------------------------------------------------------------
# commutator scaling


def bump(r):
    """Compactly supported smooth profile: 1 on [0, 1], 0 beyond 2."""
    return 1.0 - chi(r)


def commutator_scaling_check(omega_sigma: np.ndarray, grid: Grid, R_list,
                             profile: Callable = bump, max_slope: float = -0.8) -> BoundReport:
    """||[F(<x>/R), omega_sigma]|| for each R and its fitted log-log slope."""
    r = bracket(grid.points)
    rep = BoundReport("commutator_scaling", tolerance=f"slope <= {max_slope}")
    vals = []
    for R in R_list:
        F = np.diag(profile(r / R))
        v = commutator_norm(F, omega_sigma)
        vals.append(v)
        rep.rows.append({"R": R, "commutator_norm": v})
    if len(vals) > 1 and all(v > 0 for v in vals):
        slope = loglog_slope(R_list, vals)
        rep.passed = slope <= max_slope
    else:
        # F(<x>/R) constant on the grid for some R: nothing to fit
        slope = np.nan
        rep.passed = False
        rep.notes.append("commutator vanishes for some R; slope undefined")
    rep.constants = {"slope": slope}
    return rep


def gauge_commutator(omega_sigma: np.ndarray, grid: Grid) -> float:
    """||[<x>, omega_sigma]||."""
    return commutator_norm(np.diag(bracket(grid.points)), omega_sigma)
