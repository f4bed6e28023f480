"""Acceptance criteria 1-14.

Each test prints one line ``criterion <k>: PASS|FAIL <details>``; the lines
are repeated in the pytest terminal summary.  Run standalone with
``python tests/test_acceptance.py``.
"""
import json
import time
from math import comb
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from varnelson.bounds import (check_frac_power_bound, check_positivity, check_sobolev_bound,
                              check_trotter_domination, check_weight_conditions,
                              commutator_scaling_check, dissipativity_check, fit_weighted_domination,
                              loglog_slope, ultracontractivity_constant)
from varnelson.cli import main
from varnelson.config import parse_config
from varnelson.eigensolver import electron_ground_state, lowest_eigenpairs, observables
from varnelson.experiments import build_model, run_ir_sweep
from varnelson.fock import build_fock_basis, creation, annihilation
from varnelson.grid import (CoefficientSpec, assemble_h, assemble_laplacian, build_grid,
                            sample_coefficients)
from varnelson.nelson import assemble_H, assemble_H_sigma
from varnelson.results import body_of
from varnelson.spectral import (apply_function, eigendecompose, frac_inv_power_quadrature,
                                ir_dispersion, sqrt_decomposition)

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
FIXTURES = Path(__file__).resolve().parent / "fixtures"
RESULTS: dict = {}


def record(k: int, passed: bool, detail: str) -> None:
    line = f"criterion {k}: {'PASS' if passed else 'FAIL'} {detail}"
    RESULTS[k] = line
    print(line)


def mass_decay_spec(**kw):
    return CoefficientSpec(mass_decay=(1.0, 1.0), **kw)


def random_compliant(seed):
    """Smooth coefficients with 0.5 <= a, c <= 1.5 (uniformly elliptic)."""
    r = np.random.default_rng(seed)
    ka, kc = r.uniform(0.3, 1.5, 2)
    pa, pc = r.uniform(0, 2 * np.pi, 2)
    return dict(a=lambda x: 1 + 0.5 * np.sin(ka * x[:, 0] + pa),
                c=lambda x: 1 + 0.5 * np.cos(kc * x[:, -1] + pc))


# 1 -------------------------------------------------------------------------
def test_criterion_01_similarity_spectra():
    t0 = time.perf_counter()
    g = build_grid(1, 8.0, 64)
    r = np.random.default_rng(1)
    cvals = r.uniform(0.5, 1.5, g.size)
    spec = mass_decay_spec(c=lambda x: cvals)
    co = sample_coefficients(spec, g)
    h = assemble_h(co).toarray()
    conj = np.diag(1 / co.c) @ h @ np.diag(co.c)
    w = np.linalg.eigvalsh(h)
    wc = np.sort(sla.eigvals(conj).real)
    err = float(np.max(np.abs(wc - w) / np.abs(w)))
    dt = time.perf_counter() - t0
    ok = err <= 1e-10 and dt < 1.0
    record(1, ok, f"max relative eigenvalue gap {err:.2e} (<= 1e-10), {dt:.2f}s")
    assert ok


# 2 -------------------------------------------------------------------------
def test_criterion_02_uncoupled_factorization():
    t0 = time.perf_counter()
    cfg = parse_config((CONFIGS / "default_d3.ini").read_text()).with_values(charge=0.0)
    m = build_model(cfg)
    res = lowest_eigenpairs(m.H, tol=1e-12)
    eK, phi = electron_ground_state(m.K)
    obs = observables(res.ground_state, m.H, phi_K=phi)
    rel = abs(res.energy - eK) / abs(eK)
    dt = time.perf_counter() - t0
    ok = rel <= 1e-10 and obs.vacuum_overlap >= 1 - 1e-10 and dt < 10
    record(2, ok, f"|E - lambda_min(K)|/|E| = {rel:.2e}, overlap 1-{1 - obs.vacuum_overlap:.1e}, {dt:.2f}s")
    assert ok


# 3 -------------------------------------------------------------------------
def test_criterion_03_van_hove():
    t0 = time.perf_counter()
    cfg = parse_config((CONFIGS / "van_hove.ini").read_text()).with_values(kappa=0.0, charge=1.0)
    m = build_model(cfg)
    w = m.modes.energies
    g = m.coupling.g[:, 0] * (0.1 * w[0] / np.linalg.norm(m.coupling.g[:, 0]))
    exact = -np.sum(g ** 2 / (2 * w))
    errs = []
    for N in range(2, 11):
        H = assemble_H(m.K, m.modes, g[:, None], build_fock_basis(3, N))
        errs.append(abs(lowest_eigenpairs(H, tol=1e-13).energy - exact))
    # truncation error decreases until it meets the double-precision floor
    floor = 1e-14
    monotone = all(errs[i + 1] <= max(errs[i], floor) for i in range(len(errs) - 1))
    dt = time.perf_counter() - t0
    ok = errs[-1] <= 1e-8 and monotone and dt < 30
    record(3, ok, f"|E(10) - vanHove| = {errs[-1]:.1e}, errors {['%.0e' % e for e in errs]} "
                  f"monotone to floor {floor:g}: {monotone}, {dt:.2f}s")
    assert ok


# 4 -------------------------------------------------------------------------
def test_criterion_04_ccr_and_number_bound():
    t0 = time.perf_counter()
    b = build_fock_basis(4, 6)
    prot = np.flatnonzero(b.totals <= b.N_max - 1)
    ccr = 0.0
    for i in range(4):
        for j in range(4):
            C = (annihilation(i, b) @ creation(j, b) - creation(j, b) @ annihilation(i, b)).toarray()
            E = np.eye(b.dim) if i == j else np.zeros_like(C)
            ccr = max(ccr, float(np.max(np.abs((C - E)[np.ix_(prot, prot)]))))
    r = np.random.default_rng(4)
    inv = sp.diags((b.totals + 1.0) ** -0.5)
    worst = 0.0
    for _ in range(20):
        v = r.standard_normal(4) + 1j * r.standard_normal(4)
        ad = sum(v[k] * creation(k, b) for k in range(4))
        for op in (ad, ad.conj().T):
            worst = max(worst, np.linalg.norm((op @ inv).toarray(), 2) / np.linalg.norm(v))
    dt = time.perf_counter() - t0
    ok = ccr <= 1e-14 and worst <= 1 + 1e-10 and dt < 10
    record(4, ok, f"CCR defect {ccr:.1e} (rounding only), max ||a#(v)(N+1)^-1/2||/||v|| = {worst:.12f}, {dt:.2f}s")
    assert ok


# 5 -------------------------------------------------------------------------
def test_criterion_05_heat_kernel_suite():
    t0 = time.perf_counter()
    ts = np.logspace(-1, 1, 7)
    parts = []
    ok = True
    for dim, n, L in ((1, 255, 20.0), (2, 31, 8.0)):
        g = build_grid(dim, L, n)
        coef = random_compliant(5)
        co = sample_coefficients(mass_decay_spec(**coef), g)
        co0 = sample_coefficients(CoefficientSpec(**coef), g)
        h, h0 = assemble_h(co), assemble_h(co0)
        dec = eigendecompose(h)
        pos = check_positivity(dec, ts)
        tro = check_trotter_domination(h, h0, ts)
        ult = ultracontractivity_constant(dec, ts, g)
        sup = ult.constants["sup_c_t_scaled"]
        ok &= pos.passed and tro.passed and ult.passed and np.isfinite(sup)
        parts.append(f"d={dim}: min {pos.constants['min_entry']:.1e}, trotter excess "
                     f"{tro.constants['max_excess']:.1e}, sup c_t t^(d/4) {sup:.3f}")
    dt = time.perf_counter() - t0
    ok &= dt < 120
    record(5, ok, "; ".join(parts) + f", {dt:.1f}s")
    assert ok


# 6 -------------------------------------------------------------------------
def test_criterion_06_weighted_domination():
    t0 = time.perf_counter()
    ts = np.logspace(-1, 2, 13)
    out = []
    for n in (127, 255):
        g = build_grid(1, 20.0, n)
        h = assemble_h(sample_coefficients(mass_decay_spec(), g))
        out.append(fit_weighted_domination(h, assemble_laplacian(g), ts, g, a=1.0))
    C0, C1 = out[0].constants["C"], out[1].constants["C"]
    a0, a1 = out[0].constants["alpha"], out[1].constants["alpha"]
    drift = abs(C1 / C0 - 1)
    dt = time.perf_counter() - t0
    ok = all(r.passed for r in out) and a0 == a1 and drift <= 0.25 and dt < 120
    record(6, ok, f"alpha = {a0:.4f}, C(127) = {C0:.4f}, C(255) = {C1:.4f}, drift {drift:.1%} (<= 25%), {dt:.1f}s")
    assert ok


# 7 -------------------------------------------------------------------------
def test_criterion_07_weight_conditions():
    t0 = time.perf_counter()
    rep = check_weight_conditions(1.0, 0.1, [4, 16, 64, 256], build_grid(1, 20.0, 255))
    c = rep.constants
    dt = time.perf_counter() - t0
    ok = rep.passed and dt < 30
    record(7, ok, f"sup outside = {c['sup_outside']:.6f} <= 2^0.1 = {c['bound_a']:.6f}, "
                  f"slope {c['slope']:.4f} <= 0.6, {dt:.2f}s")
    assert ok


# 8 -------------------------------------------------------------------------
def test_criterion_08_dissipativity():
    t0 = time.perf_counter()
    g = build_grid(1, 20.0, 127)
    co = sample_coefficients(mass_decay_spec(), g)
    rep = dissipativity_check(assemble_h(co), co, s=4.0, samples=100, seed=8)
    dt = time.perf_counter() - t0
    ok = rep.passed and len(rep.rows) == 100 and dt < 30
    record(8, ok, f"bisected alpha = {rep.constants['alpha']:.4f}, "
                  f"min Re<f-f^,h*f>/||f||^2 = {rep.constants['min_ratio']:.3e}, {dt:.2f}s")
    assert ok


# 9 -------------------------------------------------------------------------
def test_criterion_09_fractional_power_and_sobolev():
    t0 = time.perf_counter()
    cases = []
    for L in (20.0, 40.0, 80.0):
        g = build_grid(1, L, int(round(3.2 * L)) - 1)  # spacing 0.625 on every box
        cases.append((g, eigendecompose(assemble_h(sample_coefficients(mass_decay_spec(), g)))))
    reps = [check_frac_power_bound(cases, b, 0.1) for b in (0.5, 1.0)]
    sob = check_sobolev_bound(1.0, 1.2, [build_grid(3, L, n) for L, n in ((8.0, 15), (10.0, 19), (12.0, 23))])
    dt = time.perf_counter() - t0
    ok = all(r.passed for r in reps) and sob.passed and dt < 180
    record(9, ok, f"frac ratios beta=1/2: {reps[0].stability:.4f}, beta=1: {reps[1].stability:.4f}; "
                  f"sobolev ratio {sob.stability:.4f} (all <= 1.2), {dt:.1f}s")
    assert ok


# 10 ------------------------------------------------------------------------
def test_criterion_10_laplace_quadrature():
    t0 = time.perf_counter()
    g = build_grid(1, 20.0, 127)
    decs = [eigendecompose(assemble_h(sample_coefficients(mass_decay_spec(), g)))]
    r = np.random.default_rng(10)
    A = r.standard_normal((30, 30))
    decs.append(eigendecompose(A @ A.T + 30 * np.eye(30)))
    worst = 0.0
    for beta in (0.5, 1.0, 1.5):
        for dec in decs:
            D = apply_function(dec, lambda x: x ** -beta)
            Q = frac_inv_power_quadrature(dec, beta)
            worst = max(worst, np.linalg.norm(Q - D, 2) / np.linalg.norm(D, 2))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 10
    record(10, ok, f"max relative operator-norm error {worst:.2e} (<= 1e-6), {dt:.2f}s")
    assert ok


# 11 ------------------------------------------------------------------------
def test_criterion_11_commutator_scaling():
    t0 = time.perf_counter()
    g = build_grid(1, 40.0, 255)
    dec = sqrt_decomposition(eigendecompose(assemble_h(sample_coefficients(mass_decay_spec(), g))))
    rep = commutator_scaling_check(ir_dispersion(dec, 0.1), g, [2, 4, 8, 16])
    dt = time.perf_counter() - t0
    ok = rep.passed and dt < 60
    record(11, ok, f"slope {rep.constants['slope']:.4f} (<= -0.8), {dt:.2f}s")
    assert ok


# 12 ------------------------------------------------------------------------
def test_criterion_12_ir_discriminator():
    t0 = time.perf_counter()
    fx = json.loads((FIXTURES / "ir_bruteforce.json").read_text())
    cfg = parse_config((CONFIGS / "ir_p.ini").read_text())
    table = run_ir_sweep(cfg)
    # independent cross-check of the computed norms
    agree = True
    for col in ("origin_norm_omega_inv", "origin_norm_omega_inv32"):
        for p, ref in fx[col].items():
            got = [r[table.columns.index(col)] for r in table.rows if r[0] == float(p)]
            agree &= bool(np.allclose(got, ref, atol=fx["tolerance"]))
    L = sorted(set(table.column("L")))

    def slopes(col):
        return {p: loglog_slope(L, [r[table.columns.index(col)] for r in table.rows if r[0] == p])
                for p in (1.0, 1.5)}

    lit = slopes("sup_norm_omega_inv")
    crit = slopes("sup_norm_omega_inv32")
    gap = lit[1.5] - lit[1.0]
    dt = time.perf_counter() - t0
    ok = agree and gap >= fx["required_gap"] and dt < 600
    record(12, ok, f"growth of sup||w^-1 rho_X||: p=1 {lit[1.0]:.3f}, p=3/2 {lit[1.5]:.3f}, "
                   f"gap {gap:.3f} (needs >= {fx['required_gap']}); diagnostic w^-3/2 gap "
                   f"{crit[1.5] - crit[1.0]:.3f}; brute-force agreement {agree}, {dt:.1f}s")
    assert ok


# 13 ------------------------------------------------------------------------
def test_criterion_13_ir_cutoff_convergence():
    t0 = time.perf_counter()
    cfg = parse_config((CONFIGS / "ir_sigma.ini").read_text())
    m = build_model(cfg)
    w1 = m.modes.energies[0]
    E = lowest_eigenpairs(m.H, tol=cfg.tol).energy
    sigmas = [2.0, 1.0, 0.5, 0.25, 0.1, 0.49 * w1]
    diffs = [abs(lowest_eigenpairs(assemble_H_sigma(m.H, s), tol=cfg.tol).energy - E) for s in sigmas]
    exact = all(d == 0.0 for s, d in zip(sigmas, diffs) if s < w1 / 2)
    mono = all(diffs[i + 1] <= diffs[i] for i in range(len(diffs) - 1))
    dt = time.perf_counter() - t0
    ok = exact and mono and dt < 120
    record(13, ok, f"|E(H_s)-E(H)| = {['%.2e' % d for d in diffs]}, exact below w1/2 = {w1 / 2:.4f}: "
                   f"{exact}, nonincreasing: {mono}, {dt:.2f}s")
    assert ok


# 14 ------------------------------------------------------------------------
def test_criterion_14_determinism(tmp_path):
    t0 = time.perf_counter()
    same = True
    for cmd, name in (("groundstate", "default_d3"), ("ir-sweep", "ir_sigma"), ("verify", "verify_d1")):
        bodies = []
        for run in range(2):
            out = tmp_path / f"{name}_{run}"
            main([cmd, "--config", str(CONFIGS / f"{name}.ini"), "--out", str(out), "--seed", "7"])
            bodies.append({p.name: body_of(p) for p in sorted(out.glob("*.csv"))})
        same &= bodies[0] == bodies[1] and len(bodies[0]) > 0
    dt = time.perf_counter() - t0
    record(14, same, f"CSV bodies byte-identical across two runs of groundstate, ir-sweep, verify: {same}, {dt:.1f}s")
    assert same


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
