"""Experiment configuration: sectioned ``key = value`` files.

Grammar (INI style, parsed with :mod:`configparser`)::

    [grid]          dim, L, n
    [electron]      n, L, pinned, A, kappa, delta
    [coefficients]  a, c, mass_amplitude, mass_exponent, rho_width, charge
    [fock]          M, N_max
    [sweep]         parameter, values, L_list, n_list
    [solver]        k, tol, seed, dense_limit
    [verify]        checks, t_list, s_list, R_list, L_list, n_list, c_list,
                    alpha, eps, beta, gamma, delta, sigma
    [ionization]    R_list

Lists are comma separated.  ``a``, ``c`` and ``A`` are expressions in the
node coordinates ``x``, ``y``, ``z``, the radius ``r`` and ``br`` (= <x>);
they are parsed with sympy and compiled to numpy functions.  Every value is
validated when the file is loaded, before any computation starts.
"""
from __future__ import annotations

import configparser
import hashlib
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import sympy

from .bounds import admissible_epsilon
from .fock import DIM_LIMIT
from .grid import (CoefficientSpec, HypothesisError, HypothesisWarning, bracket, build_grid,
                   gaussian_charge, sample_coefficients)

SECTIONS = ("grid", "electron", "coefficients", "fock", "sweep", "solver", "verify", "ionization")
CHECKS = ("positivity", "semigroup", "trotter", "gaussian", "weighted", "ultracontractivity",
          "weight_conditions", "dissipativity", "frac_power", "sobolev", "commutator")
SWEEP_PARAMETERS = ("sigma", "p", "N_max", "M", "n")
_SYMBOLS = sympy.symbols("x y z r br")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending section.key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def compile_expression(text: str, path: str):
    """Compile a coordinate expression into ``f(points) -> values``."""
    try:
        expr = sympy.parse_expr(text, local_dict={s.name: s for s in _SYMBOLS})
    except Exception as exc:  # sympy raises a zoo of exception types
        raise ConfigError(path, f"cannot parse expression {text!r}: {exc}") from exc
    unknown = expr.free_symbols - set(_SYMBOLS)
    if unknown:
        raise ConfigError(path, f"unknown symbols {sorted(map(str, unknown))} in {text!r}")
    fn = sympy.lambdify(_SYMBOLS, expr, modules="numpy")

    def field_fn(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        cols = [pts[:, k] if k < pts.shape[1] else np.zeros(len(pts)) for k in range(3)]
        r = np.linalg.norm(pts, axis=1)
        return np.broadcast_to(np.asarray(fn(*cols, r, bracket(pts)), dtype=float), (len(pts),)).copy()

    return field_fn


@dataclass(frozen=True)
class ExperimentConfig:
    dim: int = 1
    L: float = 10.0
    n: int = 31
    electron_n: int = 3
    electron_L: Optional[float] = None
    pinned: bool = False
    A_expr: str = "1"
    kappa: float = 1.0
    w_delta: float = 2.0
    a_expr: str = "1"
    c_expr: str = "1"
    mass_amplitude: float = 1.0
    mass_exponent: float = 1.0
    rho_width: float = 1.0
    charge: float = 1.0
    M: int = 3
    N_max: int = 4
    sweep_parameter: Optional[str] = None
    sweep_values: tuple = ()
    sweep_L: tuple = ()
    sweep_n: tuple = ()
    k: int = 1
    tol: float = 1e-10
    seed: int = 0
    dense_limit: int = 2000
    checks: tuple = ()
    t_list: tuple = (0.1, 0.3, 1.0, 3.0, 10.0)
    s_list: tuple = (4.0, 16.0, 64.0, 256.0)
    R_list: tuple = (2.0, 4.0, 8.0, 16.0)
    verify_L: tuple = (20.0, 40.0, 80.0)
    verify_n: tuple = ()
    c_list: tuple = (1.0,)
    alpha: float = 1.0
    eps: float = 0.1
    beta: float = 0.5
    gamma: float = 1.0
    delta: float = 1.2
    sigma: float = 0.1
    ionization_R: tuple = ()
    source: str = field(default="", compare=False)

    # -- derived ------------------------------------------------------------
    @property
    def electron_extent(self) -> float:
        return self.electron_L if self.electron_L is not None else self.L / 2.0

    def coefficient_spec(self) -> CoefficientSpec:
        kappa, dlt = self.kappa, self.w_delta
        return CoefficientSpec(
            a=compile_expression(self.a_expr, "coefficients.a"),
            c=compile_expression(self.c_expr, "coefficients.c"),
            mass_decay=(self.mass_amplitude, self.mass_exponent),
            A=compile_expression(self.A_expr, "electron.A"),
            W=lambda x: kappa * bracket(x) ** (2 * dlt),
            rho=gaussian_charge(self.rho_width, self.dim),
            charge=self.charge,
            decay_metadata={"amplitude": self.mass_amplitude, "p": self.mass_exponent})

    def canonical(self) -> str:
        items = asdict(self)
        items.pop("source")
        return repr(sorted(items.items()))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def with_values(self, **kw) -> "ExperimentConfig":
        return validate(replace(self, **kw))


# ---------------------------------------------------------------------------
# parsing


def _floats(text: str, path: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(path, f"expected a comma-separated list of numbers, got {text!r}") from exc


def _get(cp, section, key, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    path = f"{section}.{key}"
    try:
        if conv is bool:
            return cp.getboolean(section, key)
        if conv is tuple:
            return _floats(raw, path)
        if conv is int:
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(path, f"cannot interpret {raw!r} as {conv.__name__}") from exc


_LAYOUT = {
    "grid": {"dim": ("dim", int), "L": ("L", float), "n": ("n", int)},
    "electron": {"n": ("electron_n", int), "L": ("electron_L", float), "pinned": ("pinned", bool),
                 "A": ("A_expr", str), "kappa": ("kappa", float), "delta": ("w_delta", float)},
    "coefficients": {"a": ("a_expr", str), "c": ("c_expr", str),
                     "mass_amplitude": ("mass_amplitude", float),
                     "mass_exponent": ("mass_exponent", float),
                     "rho_width": ("rho_width", float), "charge": ("charge", float)},
    "fock": {"M": ("M", int), "N_max": ("N_max", int)},
    "sweep": {"parameter": ("sweep_parameter", str), "values": ("sweep_values", tuple),
              "L_list": ("sweep_L", tuple), "n_list": ("sweep_n", tuple)},
    "solver": {"k": ("k", int), "tol": ("tol", float), "seed": ("seed", int),
               "dense_limit": ("dense_limit", int)},
    "verify": {"checks": ("checks", str), "t_list": ("t_list", tuple), "s_list": ("s_list", tuple),
               "R_list": ("R_list", tuple), "L_list": ("verify_L", tuple), "n_list": ("verify_n", tuple),
               "c_list": ("c_list", tuple), "alpha": ("alpha", float), "eps": ("eps", float),
               "beta": ("beta", float), "gamma": ("gamma", float), "delta": ("delta", float),
               "sigma": ("sigma", float)},
    "ionization": {"R_list": ("ionization_R", tuple)},
}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (M vs m)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(source, str(exc)) from exc
    kw = {}
    for section in cp.sections():
        if section not in _LAYOUT:
            raise ConfigError(section, f"unknown section; expected one of {', '.join(SECTIONS)}")
        for key in cp[section]:
            if key not in _LAYOUT[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            name, conv = _LAYOUT[section][key]
            kw[name] = _get(cp, section, key, conv, None)
    if "checks" in kw:
        kw["checks"] = tuple(c.strip() for c in kw["checks"].split(",") if c.strip())
    return validate(ExperimentConfig(source=source, **kw))


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(str(p), f"cannot read config: {exc}") from exc
    return parse_config(text, source=str(p))


# ---------------------------------------------------------------------------
# validation


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every field against the preconditions of the modules that consume it."""
    _require(cfg.dim in (1, 2, 3), "grid.dim", f"must be 1, 2 or 3, got {cfg.dim}")
    _require(cfg.L > 0, "grid.L", f"must be positive, got {cfg.L}")
    _require(cfg.n >= 2, "grid.n", f"must be >= 2, got {cfg.n}")
    _require(cfg.electron_n >= 1, "electron.n", f"must be >= 1, got {cfg.electron_n}")
    _require(cfg.electron_extent > 0, "electron.L", "must be positive")
    _require(cfg.electron_extent <= cfg.L, "electron.L",
             f"electron box {cfg.electron_extent} exceeds boson box {cfg.L}")
    _require(cfg.mass_amplitude >= 0, "coefficients.mass_amplitude", "must be >= 0")
    _require(cfg.rho_width > 0, "coefficients.rho_width", "must be positive")
    _require(cfg.charge >= 0, "coefficients.charge", "must be >= 0 (rho >= 0)")
    _require(cfg.kappa >= 0, "electron.kappa", "must be >= 0")
    if cfg.w_delta <= 1.5:
        warnings.warn("electron.delta <= 3/2: confinement weaker than the ground-state theorem assumes",
                      HypothesisWarning, stacklevel=2)
    _require(cfg.M >= 1, "fock.M", f"must be >= 1, got {cfg.M}")
    _require(cfg.N_max >= 0, "fock.N_max", f"must be >= 0, got {cfg.N_max}")
    from math import comb
    _require(comb(cfg.M + cfg.N_max, cfg.N_max) <= DIM_LIMIT, "fock",
             f"Fock dimension C({cfg.M}+{cfg.N_max}, {cfg.N_max}) exceeds {DIM_LIMIT}")
    _require(cfg.M <= cfg.n ** cfg.dim, "fock.M", "more modes than boson grid nodes")
    if cfg.sweep_parameter is not None:
        _require(cfg.sweep_parameter in SWEEP_PARAMETERS, "sweep.parameter",
                 f"must be one of {', '.join(SWEEP_PARAMETERS)}")
        _require(len(cfg.sweep_values) > 0, "sweep.values", "must be nonempty")
        if cfg.sweep_parameter == "sigma":
            v = cfg.sweep_values
            _require(all(s > 0 for s in v), "sweep.values", "sigma values must be positive")
            _require(all(v[i] > v[i + 1] for i in range(len(v) - 1)), "sweep.values",
                     "sigma values must be strictly decreasing")
        if cfg.sweep_parameter in ("N_max", "M", "n"):
            _require(all(float(v).is_integer() and v >= 0 for v in cfg.sweep_values), "sweep.values",
                     f"{cfg.sweep_parameter} values must be nonnegative integers")
        _require(len(cfg.sweep_L) == len(cfg.sweep_n), "sweep.L_list",
                 "L_list and n_list must have equal length")
    _require(cfg.k >= 1, "solver.k", "must be >= 1")
    _require(cfg.tol > 0, "solver.tol", "must be positive")
    _require(cfg.dense_limit >= 1, "solver.dense_limit", "must be >= 1")
    for c in cfg.checks:
        _require(c in CHECKS, "verify.checks", f"unknown check {c!r}; known: {', '.join(CHECKS)}")
    _require(all(t > 0 for t in cfg.t_list), "verify.t_list", "times must be positive")
    _require(all(s > 0 for s in cfg.s_list), "verify.s_list", "must be positive")
    _require(all(R > 0 for R in cfg.R_list), "verify.R_list", "must be positive")
    _require(all(c > 0 for c in cfg.c_list), "verify.c_list", "must be positive")
    _require(cfg.alpha > 0, "verify.alpha", "must be positive")
    if "weight_conditions" in cfg.checks:
        hi = admissible_epsilon(cfg.alpha, cfg.dim)
        _require(0 < cfg.eps < hi, "verify.eps", f"must lie in (0, d/(d+4 alpha)) = (0, {hi:.6g})")
    _require(cfg.eps > 0, "verify.eps", "must be positive")
    _require(0 < cfg.beta <= cfg.dim / 2, "verify.beta", f"must lie in (0, d/2] = (0, {cfg.dim / 2}]")
    if "sobolev" in cfg.checks:
        _require(0 < cfg.gamma < cfg.dim / 2, "verify.gamma", f"must lie in (0, d/2) = (0, {cfg.dim / 2})")
    _require(cfg.sigma > 0, "verify.sigma", "must be positive")
    if cfg.verify_n:
        _require(len(cfg.verify_n) == len(cfg.verify_L), "verify.n_list", "must match L_list in length")
    _require(all(R >= 0 for R in cfg.ionization_R), "ionization.R_list", "must be nonnegative")
    _require(all(R < cfg.electron_extent for R in cfg.ionization_R), "ionization.R_list",
             f"must be below the electron box extent {cfg.electron_extent}")
    # the coefficient expressions must compile; ellipticity is checked on sampling
    for expr, path in ((cfg.a_expr, "coefficients.a"), (cfg.c_expr, "coefficients.c"),
                       (cfg.A_expr, "electron.A")):
        compile_expression(expr, path)
    try:
        sample_coefficients(cfg.coefficient_spec(), build_grid(cfg.dim, cfg.L, cfg.n))
    except HypothesisError as exc:
        raise ConfigError("coefficients", str(exc)) from exc
    return cfg
