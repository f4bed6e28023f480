"""Experiment drivers: each takes an ExperimentConfig and returns result tables."""
from __future__ import annotations

import contextlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import scipy.sparse as sp

from .bounds import (BoundReport, check_frac_power_bound, check_positivity, check_sobolev_bound,
                     check_trotter_domination, check_weight_conditions, commutator_scaling_check,
                     dissipativity_check, fit_gaussian_domination, fit_weighted_domination,
                     gauge_commutator, loglog_slope, semigroup_defect, ultracontractivity_constant)
from .config import ConfigError, ExperimentConfig
from .eigensolver import lowest_eigenpairs, ionization_threshold, observables
from .fock import build_fock_basis, mode_basis
from .grid import (Grid, assemble_K, assemble_h, assemble_laplacian, build_grid, bracket,
                   sample_coefficients)
from .nelson import (assemble_H, assemble_H_sigma, assemble_H_tilde_sigma, charge_norm,
                     coupling_operator, ir_norm, translated_charges)
from .results import ResultTable
from .spectral import eigendecompose, ir_dispersion, sqrt_decomposition

logger = logging.getLogger(__name__)


@contextlib.contextmanager
def config_context(path: str):
    """Prefix errors raised inside the block with the config path that produced them."""
    try:
        yield
    except ConfigError:
        raise
    except Exception as exc:
        exc.args = (f"[{path}] {exc.args[0] if exc.args else ''}",) + tuple(exc.args[1:])
        raise


def _provenance(cfg: ExperimentConfig, **extra) -> dict:
    return {"config_hash": cfg.hash, "config_source": cfg.source or "<defaults>",
            "seed": cfg.seed, **extra}


def _map(fn, items, workers: int):
    """Order-preserving map over a bounded process pool (serial for one worker)."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# model assembly


@dataclass
class Model:
    cfg: ExperimentConfig
    grid: Grid
    coeffs: object
    h: object
    dec_h: object
    dec_omega: object
    modes: object
    electron_grid: Grid
    K: sp.csr_matrix
    coupling: object
    basis: object
    H: object


def _electron_side(cfg: ExperimentConfig, spec):
    if cfg.pinned:
        # a single electron node at the origin; K reduces to W(0)
        egrid = Grid(cfg.dim, cfg.electron_extent, 1)
        W0 = float(spec.W(np.zeros((1, cfg.dim)))[0])
        return egrid, sp.csr_matrix(np.array([[W0]]))
    egrid = build_grid(cfg.dim, cfg.electron_extent, cfg.electron_n)
    return egrid, assemble_K(sample_coefficients(spec, egrid)).matrix


def build_model(cfg: ExperimentConfig, sigma: float | None = None) -> Model:
    spec = cfg.coefficient_spec()
    with config_context("grid"):
        grid = build_grid(cfg.dim, cfg.L, cfg.n)
    with config_context("coefficients"):
        coeffs = sample_coefficients(spec, grid)
        h = assemble_h(coeffs)
        dec_h = eigendecompose(h)
        dec_omega = sqrt_decomposition(dec_h)
    with config_context("fock"):
        modes = mode_basis(dec_omega, cfg.M)
        basis = build_fock_basis(cfg.M, cfg.N_max)
    with config_context("electron"):
        egrid, K = _electron_side(cfg, spec)
        coupling = coupling_operator(coeffs, dec_omega, modes, egrid, sigma=sigma)
    H = assemble_H(K, modes, coupling, basis)
    return Model(cfg, grid, coeffs, h, dec_h, dec_omega, modes, egrid, K, coupling, basis, H)


def _solve(H, cfg: ExperimentConfig):
    with config_context("solver"):
        res = lowest_eigenpairs(H, k=cfg.k, tol=cfg.tol, seed=cfg.seed, dense_threshold=cfg.dense_limit)
    return res


def _ground_row(model: Model, H=None) -> dict:
    H = H or model.H
    res = _solve(H, model.cfg)
    _, phi_K = _k_ground(model)
    obs = observables(res.ground_state, H, phi_K=phi_K, energy=res.energy)
    return {"E_gs": res.energy, "mean_N": obs.mean_number, "vacuum_overlap": obs.vacuum_overlap,
            "residual": float(res.residuals[0])}


def _k_ground(model: Model):
    K = model.K
    if K.shape[0] == 1:
        return float(K[0, 0]), np.ones(1)
    r = lowest_eigenpairs(K, k=1, tol=1e-12, seed=model.cfg.seed)
    return r.energy, r.ground_state


# ---------------------------------------------------------------------------
# groundstate


GROUND_COLUMNS = ["E_gs", "mean_N", "vacuum_overlap", "residual", "lambda_min_K", "fock_dim", "dim"]


def run_groundstate(cfg: ExperimentConfig) -> ResultTable:
    model = build_model(cfg)
    row = _ground_row(model)
    row.update(lambda_min_K=_k_ground(model)[0], fock_dim=model.basis.dim, dim=model.H.dim)
    table = ResultTable("groundstate", GROUND_COLUMNS, provenance=_provenance(cfg))
    table.add(row)
    return table


# ---------------------------------------------------------------------------
# infrared sweeps


SIGMA_COLUMNS = ["sigma", "E_H", "E_H_sigma", "E_H_tilde_sigma", "abs_diff", "mean_N_sigma",
                 "vacuum_overlap_sigma", "ir_norm_beta1"]
P_COLUMNS = ["p", "L", "n", "sup_norm_omega_inv", "origin_norm_omega_inv",
             "sup_norm_omega_inv32", "origin_norm_omega_inv32"]


def _sigma_row(args):
    cfg, sigma = args
    model = build_model(cfg)
    E_H = _solve(model.H, cfg).energy
    Hs = assemble_H_sigma(model.H, sigma)
    Ht = assemble_H_tilde_sigma(model.H, sigma)
    row = _ground_row(model, Hs)
    cut = coupling_operator(model.coeffs, model.dec_omega, model.modes, model.electron_grid,
                            sigma=sigma)
    return {"sigma": sigma, "E_H": E_H, "E_H_sigma": row["E_gs"],
            "E_H_tilde_sigma": _solve(Ht, cfg).energy, "abs_diff": abs(row["E_gs"] - E_H),
            "mean_N_sigma": row["mean_N"], "vacuum_overlap_sigma": row["vacuum_overlap"],
            "ir_norm_beta1": ir_norm(cut, model.K, 1.0).norm}


def sample_positions(grid: Grid, extent: float, count: int = 12) -> np.ndarray:
    """Electron positions for a sup over X: nodes on the positive first axis up to ``extent``."""
    axis = grid.axis
    keep = axis[(axis >= -1e-12) & (axis <= extent + 1e-12)]
    step = max(1, int(np.ceil(keep.size / count)))
    xs = keep[::step]
    pts = np.zeros((xs.size, grid.dim))
    pts[:, 0] = xs
    return pts


def charge_norm_profile(cfg: ExperimentConfig, L: float, n: int, p: float, exponents=(1.0, 1.5)):
    """(origin, sup) of ||omega^-e rho_X|| over sampled X for each exponent, sparse route."""
    c = replace(cfg, L=L, n=n, mass_exponent=p)
    grid = build_grid(c.dim, L, n)
    coeffs = sample_coefficients(c.coefficient_spec(), grid)
    h = assemble_h(coeffs)
    X = sample_positions(grid, min(c.electron_extent, L))
    rho_X = translated_charges(coeffs, SimpleNamespace(points=X, size=len(X)))
    out = {}
    for e in exponents:
        vals = np.array([charge_norm(h, rho_X[:, k], e, grid.cell_volume) for k in range(len(X))])
        out[e] = (float(vals[0]), float(vals.max()))
    return out


def _p_row(args):
    cfg, p, L, n = args
    prof = charge_norm_profile(cfg, L, int(n), p)
    return {"p": p, "L": L, "n": int(n), "sup_norm_omega_inv": prof[1.0][1],
            "origin_norm_omega_inv": prof[1.0][0], "sup_norm_omega_inv32": prof[1.5][1],
            "origin_norm_omega_inv32": prof[1.5][0]}


def growth_exponents(table: ResultTable, column: str) -> dict:
    """Fitted log-log slope of ``column`` against L, per p."""
    ps = sorted(set(table.column("p")))
    out = {}
    for p in ps:
        rows = [r for r in table.rows if r[0] == p]
        Ls = [r[table.columns.index("L")] for r in rows]
        vs = [r[table.columns.index(column)] for r in rows]
        out[p] = loglog_slope(Ls, vs)
    return out


def run_ir_sweep(cfg: ExperimentConfig, workers: int = 1) -> ResultTable:
    if cfg.sweep_parameter == "sigma":
        rows = _map(_sigma_row, [(cfg, s) for s in cfg.sweep_values], workers)
        rows.sort(key=lambda r: -r["sigma"])
        table = ResultTable("ir_sweep_sigma", SIGMA_COLUMNS, provenance=_provenance(cfg))
        for r in rows:
            table.add(r)
        N = table.column("mean_N_sigma")
        D = table.column("abs_diff")
        table.provenance["mean_N_nondecreasing"] = all(N[i + 1] >= N[i] - 1e-10 for i in range(len(N) - 1))
        table.provenance["abs_diff_nonincreasing"] = all(D[i + 1] <= D[i] + 1e-12 for i in range(len(D) - 1))
        return table
    if cfg.sweep_parameter == "p":
        grids = list(zip(cfg.sweep_L, cfg.sweep_n)) or [(cfg.L, cfg.n)]
        items = [(cfg, p, L, n) for p in cfg.sweep_values for (L, n) in grids]
        rows = _map(_p_row, items, workers)
        rows.sort(key=lambda r: (r["p"], r["L"]))
        table = ResultTable("ir_sweep_p", P_COLUMNS, provenance=_provenance(cfg))
        for r in rows:
            table.add(r)
        if len(grids) >= 2:
            for col in ("sup_norm_omega_inv", "sup_norm_omega_inv32", "origin_norm_omega_inv32"):
                slopes = growth_exponents(table, col)
                table.provenance[f"growth_{col}"] = " ".join(f"p={p:g}:{s:.6f}" for p, s in slopes.items())
        return table
    raise ConfigError("sweep.parameter", "ir-sweep needs parameter = sigma or p")


# ---------------------------------------------------------------------------
# truncation convergence


def _convergence_row(args):
    cfg, name, value = args
    c = cfg.with_values(**{name: int(value)})
    model = build_model(c)
    row = _ground_row(model)
    row["value"] = int(value)
    return row


def run_convergence(cfg: ExperimentConfig, workers: int = 1) -> ResultTable:
    name = cfg.sweep_parameter
    if name not in ("N_max", "M", "n"):
        raise ConfigError("sweep.parameter", "convergence needs parameter = N_max, M or n")
    rows = _map(_convergence_row, [(cfg, name, v) for v in cfg.sweep_values], workers)
    rows.sort(key=lambda r: r["value"])
    table = ResultTable(f"convergence_{name}", [name, "E_gs", "delta_E", "mean_N", "residual"],
                        provenance=_provenance(cfg))
    prev = None
    for r in rows:
        table.add([r["value"], r["E_gs"], np.nan if prev is None else r["E_gs"] - prev,
                   r["mean_N"], r["residual"]])
        prev = r["E_gs"]
    if name == "N_max":
        E = table.column("E_gs")
        table.provenance["variational_monotone"] = all(E[i + 1] <= E[i] + 1e-10 for i in range(len(E) - 1))
    return table


# ---------------------------------------------------------------------------
# ionization


def run_ionization(cfg: ExperimentConfig) -> ResultTable:
    if not cfg.ionization_R:
        raise ConfigError("ionization.R_list", "must be nonempty")
    model = build_model(cfg)
    E = _solve(model.H, cfg).energy
    with config_context("ionization"):
        sig = ionization_threshold(model.H, model.electron_grid, cfg.ionization_R, tol=cfg.tol,
                                   seed=cfg.seed)
    table = ResultTable("ionization", ["R", "Sigma_R", "E_gs", "margin"], provenance=_provenance(cfg))
    for R, s in zip(cfg.ionization_R, sig):
        # R = 0 restricts nothing, so the margin is zero by definition
        table.add([R, float(s), E, 0.0 if R == 0 else float(s) - E])
    return table


# ---------------------------------------------------------------------------
# bound verification


def report_table(rep: BoundReport, cfg: ExperimentConfig) -> ResultTable:
    cols = []
    for r in rep.rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    table = ResultTable(rep.name, cols, provenance=_provenance(
        cfg, passed=rep.passed, summary=rep.summary_line()))
    for r in rep.rows:
        table.add([r.get(c, np.nan) for c in cols])
    return table


def _verify_grids(cfg: ExperimentConfig, dim: int):
    Ls = cfg.verify_L
    if cfg.verify_n:
        return [build_grid(dim, L, int(n)) for L, n in zip(Ls, cfg.verify_n)]
    # same node density as the base grid
    density = (cfg.n + 1) / (2 * cfg.L)
    return [build_grid(dim, L, max(2, int(round(2 * L * density)) - 1)) for L in Ls]


def _semigroup_report(dec, t_list, tol=1e-11) -> BoundReport:
    rep = BoundReport("semigroup", tolerance=f"max defect <= {tol:g}")
    worst = 0.0
    for t in t_list:
        d = semigroup_defect(dec, t, t)
        rep.rows.append({"t": t, "s": t, "defect": d})
        worst = max(worst, d)
    rep.constants = {"max_defect": worst}
    rep.passed = worst <= tol
    return rep


def _commutator_report(cfg: ExperimentConfig, model: Model) -> BoundReport:
    om = ir_dispersion(model.dec_omega, cfg.sigma)
    rep = commutator_scaling_check(om, model.grid, cfg.R_list)
    # gauge commutator under refinement: same box, doubled resolution
    fine = build_grid(cfg.dim, cfg.L, 2 * cfg.n + 1)
    cf = sample_coefficients(cfg.coefficient_spec(), fine)
    om_f = ir_dispersion(sqrt_decomposition(eigendecompose(assemble_h(cf))), cfg.sigma)
    g0, g1 = gauge_commutator(om, model.grid), gauge_commutator(om_f, fine)
    rep.constants.update(gauge_coarse=g0, gauge_fine=g1, gauge_ratio=g1 / g0)
    rep.passed = rep.passed and g1 / g0 <= 1.2
    return rep


def run_check(name: str, cfg: ExperimentConfig, model: Model) -> BoundReport:
    t = cfg.t_list
    grid, coeffs = model.grid, model.coeffs
    if name == "positivity":
        return check_positivity(model.dec_h, t)
    if name == "semigroup":
        return _semigroup_report(model.dec_h, t)
    if name == "trotter":
        h0 = assemble_h(replace(coeffs, m=np.zeros_like(coeffs.m)))
        return check_trotter_domination(model.h, h0, t)
    if name == "gaussian":
        return fit_gaussian_domination(model.h, assemble_laplacian(grid), t, cfg.c_list, grid)
    if name == "weighted":
        return fit_weighted_domination(model.h, assemble_laplacian(grid), t, grid,
                                       a=cfg.mass_amplitude, c=cfg.c_list[0])
    if name == "ultracontractivity":
        return ultracontractivity_constant(model.dec_h, t, grid)
    if name == "weight_conditions":
        return check_weight_conditions(cfg.alpha, cfg.eps, cfg.s_list, grid, c=coeffs.c)
    if name == "dissipativity":
        return dissipativity_check(model.h, coeffs, s=cfg.s_list[0], samples=100, seed=cfg.seed)
    if name == "frac_power":
        cases = []
        for g in _verify_grids(cfg, cfg.dim):
            cc = sample_coefficients(cfg.coefficient_spec(), g)
            cases.append((g, eigendecompose(assemble_h(cc))))
        return check_frac_power_bound(cases, cfg.beta, cfg.eps)
    if name == "sobolev":
        return check_sobolev_bound(cfg.gamma, cfg.delta, _verify_grids(cfg, 3))
    if name == "commutator":
        return _commutator_report(cfg, model)
    raise ConfigError("verify.checks", f"unknown check {name!r}")


def _model_for_verify(cfg: ExperimentConfig) -> Model:
    spec = cfg.coefficient_spec()
    grid = build_grid(cfg.dim, cfg.L, cfg.n)
    coeffs = sample_coefficients(spec, grid)
    h = assemble_h(coeffs)
    dec_h = eigendecompose(h)
    return Model(cfg, grid, coeffs, h, dec_h, sqrt_decomposition(dec_h), None, None, None,
                 None, None, None)


def _verify_one(args):
    cfg, name = args
    with config_context(f"verify.{name}"):
        return run_check(name, cfg, _model_for_verify(cfg))


def run_verify(cfg: ExperimentConfig, workers: int = 1) -> tuple[ResultTable, dict]:
    """Run the configured checks; returns the summary table and per-check tables."""
    if not cfg.checks:
        raise ConfigError("verify.checks", "no checks requested")
    reports = _map(_verify_one, [(cfg, c) for c in cfg.checks], workers)
    summary = ResultTable("verify_summary", ["check", "passed", "summary"], provenance=_provenance(cfg))
    tables = {}
    for name, rep in zip(cfg.checks, reports):
        summary.add([name, bool(rep.passed), rep.summary_line()])
        tables[name] = report_table(rep, cfg)
    summary.provenance["all_passed"] = all(r.passed for r in reports)
    return summary, tables


# ---------------------------------------------------------------------------
# plotting


def write_plot(csv_path, out_dir) -> tuple[Path, Path]:
    """Convert a result CSV into a gnuplot data file and a script plotting every column vs the first."""
    from .results import read_csv

    table = read_csv(csv_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(csv_path).stem
    dat = out_dir / f"{stem}.dat"
    gp = out_dir / f"{stem}.gp"
    numeric = [k for k, c in enumerate(table.columns)
               if all(isinstance(r[k], float) for r in table.rows)]
    if not numeric:
        raise ValueError(f"{csv_path} has no numeric columns to plot")
    lines = ["# " + " ".join(table.columns[k] for k in numeric)]
    lines += [" ".join(f"{r[k]:.16e}" for k in numeric) for r in table.rows]
    dat.write_text("\n".join(lines) + "\n")
    x = table.columns[numeric[0]]
    plots = [f"'{dat.name}' using 1:{j + 1} with linespoints title '{table.columns[k]}'"
             for j, k in enumerate(numeric[1:], start=1)]
    script = [f"set xlabel '{x}'", "set key outside", f"set title '{stem}'",
              "plot " + ", \\\n     ".join(plots) if plots else f"plot '{dat.name}' using 1"]
    gp.write_text("\n".join(script) + "\n")
    return dat, gp
