"""Scenario registry: transducer specs, full models and reduced baselines.

Four setups are provided:

``qnd``
    qubit dispersively coupled to a thermal cavity, homodyne readout;
``parity``
    two qubits on one cavity, joint readout of ``sigma_z^1 + sigma_z^2``;
``jc``
    Jaynes-Cummings coupling read out on a sideband (oscillating elimination);
``twoosc``
    qubit on a thermal oscillator, itself read out through a second oscillator.

All rates are in units of ``kappa`` and times in ``1/kappa``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any

import numpy as np

from .eliminate import EffectiveSME, SystemCoupling, effective_oscillating, effective_static
from .hilbert import (SIGMA_MINUS, SIGMA_PLUS, SIGMA_Z, FockMode, Qubit, SMEGenerator, SpaceLayout,
                      dag, default_cutoff, destroy, full_generator, position, projector,
                      quadrature, qubit_ket, steady_state, thermal_state)
from .moments import (GaussianTransducer, HomodyneChannel, MomentSolution, heisenberg_min_eig,
                      lyapunov_residual, solve_moments)
from .sde import IntegrationConfig, SimModel

SCENARIOS = ("qnd", "parity", "jc", "twoosc")
MODELS = ("Full", "GAE", "DOE")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points at the offending input line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """Physical and numerical parameters of one run.

    ``cutoffs`` lists Fock levels per mode (one entry for ``qnd``/``parity``/``jc``,
    two for ``twoosc``); an empty tuple selects the defaults.
    """

    scenario: str = "qnd"
    kappa: float = 1.0
    chi: float = 0.1
    g: float = 0.1
    gamma: float = 0.1
    omega: float = 10.0
    nbar: float = 2.0
    phi: float = math.pi / 2
    T_m: float = 50.0
    nu: tuple = ()
    models: tuple = ("Full", "GAE", "DOE")
    dt: float = 0.005
    n_traj: int = 500
    seed: int = 7
    cutoffs: tuple = ()
    record_every: int = 10
    renormalize_every: int = 1
    workers: int = 0
    pairing: str = "noise"
    out_dir: str = "runs"
    plot_script: bool = False
    trajectory_csv: int = 0

    def integration(self, T: float | None = None) -> IntegrationConfig:
        return IntegrationConfig(dt=self.dt, T=self.T_m if T is None else T, seed=self.seed,
                                 renormalize_every=self.renormalize_every,
                                 record_every=self.record_every)


# thresholds on the integrated current J = int dI (units of 1/sqrt(kappa)); the outer
# peaks of the parity histogram sit near |J| ~ 85 at T_m = 150, so the grid runs to 120
PARITY_NU = tuple(float(x) for x in range(2, 122, 2))

# defaults follow the parameter points of each experiment
DEFAULTS: dict[str, dict[str, Any]] = {
    "qnd": dict(chi=0.1, nbar=2.0, phi=math.pi / 2, T_m=50.0, n_traj=500, dt=0.005,
                cutoffs=(20,), models=("Full", "GAE", "DOE"), seed=7),
    "parity": dict(chi=0.1, nbar=0.0, phi=-math.pi / 2, T_m=150.0, n_traj=1000, dt=0.01,
                   cutoffs=(20,), models=("GAE",), seed=11, nu=PARITY_NU),
    "jc": dict(g=0.1, nbar=2.0, phi=0.0, T_m=50.0, omega=10.0, n_traj=500, dt=0.005,
               cutoffs=(20,), models=("Full", "GAE", "DOE"), seed=13),
    "twoosc": dict(chi=0.2, g=1.0, omega=5.0, gamma=0.1, nbar=2.0, phi=-math.pi / 2, T_m=20.0,
                   n_traj=100, dt=0.002, cutoffs=(12, 6), models=("Full", "GAE"), seed=17),
}

_KEYS = {
    "scenario.name": "scenario", "scenario.kappa": "kappa", "scenario.chi": "chi",
    "scenario.g": "g", "scenario.gamma": "gamma", "scenario.omega": "omega",
    "scenario.nbar": "nbar", "scenario.phi": "phi", "scenario.t_m": "T_m",
    "scenario.nu": "nu", "scenario.models": "models",
    "numerics.dt": "dt", "numerics.n_traj": "n_traj", "numerics.seed": "seed",
    "numerics.cutoffs": "cutoffs", "numerics.record_every": "record_every",
    "numerics.renormalize_every": "renormalize_every", "numerics.workers": "workers",
    "numerics.pairing": "pairing",
    "output.dir": "out_dir", "output.plot_script": "plot_script",
    "output.trajectory_csv": "trajectory_csv",
}
_REVERSE = {v: k for k, v in _KEYS.items()}


def _convert(name: str, raw: str):
    ftype = {f.name: f.type for f in fields(ScenarioConfig)}[name]
    raw = raw.strip()
    if name in ("nu",):
        return tuple(float(x) for x in raw.split(",") if x.strip())
    if name == "cutoffs":
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if name == "models":
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    if ftype in ("float", float):
        return float(raw)
    if ftype in ("int", int):
        return int(raw)
    if ftype in ("bool", bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return raw


def make_config(scenario: str = "qnd", **overrides) -> ScenarioConfig:
    """Scenario defaults merged with ``overrides``, then validated."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r} (choose from {', '.join(SCENARIOS)})")
    vals = dict(DEFAULTS[scenario])
    vals.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ScenarioConfig(scenario=scenario, **vals)
    validate(cfg)
    return cfg


def parse_config(text: str) -> ScenarioConfig:
    """Parse flat ``section.key = value`` lines; ``#`` starts a comment."""
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'section.key = value', got {body!r}", lineno)
        key, raw = (x.strip() for x in body.split("=", 1))
        key = key.lower()
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        name = _KEYS[key]
        if name in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[name] = _convert(name, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno) from None
        lines[name] = lineno
    scenario = values.pop("scenario", None)
    if scenario is None:
        raise ConfigError("missing scenario.name")
    try:
        return make_config(scenario, **values)
    except ConfigError as exc:
        field_name = getattr(exc, "field", None)
        raise ConfigError(str(exc), lines.get(field_name)) from None


def config_to_text(cfg: ScenarioConfig) -> str:
    """Canonical text form; ``parse_config(config_to_text(c)) == c``."""
    out = []
    for f in fields(ScenarioConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            s = ",".join(repr(float(x)) if isinstance(x, (float, np.floating)) else str(x) for x in v)
        elif isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        out.append(f"{_REVERSE[f.name]} = {s}")
    return "\n".join(out) + "\n"


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(config_to_text(replace(cfg, workers=0, out_dir="")).encode()).hexdigest()[:12]


class _FieldError(ConfigError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(message)


def validate(cfg: ScenarioConfig) -> None:
    def need(cond, name, msg):
        if not cond:
            raise _FieldError(name, msg)

    need(cfg.scenario in SCENARIOS, "scenario", f"unknown scenario {cfg.scenario!r}")
    need(cfg.kappa > 0, "kappa", "kappa must be positive")
    need(cfg.nbar >= 0, "nbar", "nbar must be non-negative")
    need(cfg.dt > 0, "dt", "dt must be positive")
    need(cfg.T_m >= 0, "T_m", "T_m must be non-negative")
    need(cfg.n_traj >= 1, "n_traj", "n_traj must be at least 1")
    need(cfg.record_every >= 1, "record_every", "record_every must be at least 1")
    need(0 <= cfg.seed < 2 ** 64, "seed", "seed must fit in 64 bits")
    need(all(m in MODELS for m in cfg.models), "models", f"models must be drawn from {MODELS}")
    need(len(cfg.models) >= 1, "models", "at least one model is required")
    if "DOE" in cfg.models:
        need(cfg.scenario in ("qnd", "jc"), "models", "DOE is only available for qnd and jc")
    n_modes = 2 if cfg.scenario == "twoosc" else 1
    need(len(cfg.cutoffs) in (0, n_modes), "cutoffs", f"{cfg.scenario} needs {n_modes} cutoff(s)")
    need(all(c >= 2 for c in cfg.cutoffs), "cutoffs", "cutoffs must be at least 2")
    if cfg.scenario == "twoosc":
        need(cfg.gamma > 0, "gamma", "twoosc requires gamma > 0")
        need(cfg.omega != 0, "omega", "twoosc requires a nonzero omega")
    if cfg.scenario == "jc":
        need(cfg.omega > 0, "omega", "jc requires omega > 0")
    need(all(n >= 0 for n in cfg.nu), "nu", "thresholds must be non-negative")
    need(cfg.pairing in ("noise", "record"), "pairing", "pairing must be 'noise' or 'record'")


# -- scenario models -----------------------------------------------------------

@dataclass
class ScenarioModels:
    """Everything built for one configuration."""

    config: ScenarioConfig
    transducer: GaussianTransducer
    moments: MomentSolution
    coupling: SystemCoupling
    effective: EffectiveSME
    models: dict = field(default_factory=dict)   # name -> SimModel
    system_dims: tuple = (2,)

    @property
    def reduced(self) -> dict:
        return {k: v for k, v in self.models.items() if k != "Full"}


def _thermal_pair(kappa: float, nbar: float):
    xi1 = np.sqrt(kappa * (nbar + 1) / 2) * np.array([1, 1j])
    xi2 = np.sqrt(kappa * nbar / 2) * np.array([1, -1j])
    return xi1, xi2


def thermal_homodyne_channel(kappa: float, nbar: float, detuning: float = 0.0) -> HomodyneChannel:
    """``lam = sqrt(kappa/(2n+1)) ((n+1) a - n a^dag)`` as ``(c + i m)^T r``."""
    c = np.sqrt(kappa / (2 * (2 * nbar + 1))) * np.array([1.0, 0.0])
    m = np.sqrt(kappa * (2 * nbar + 1) / 2) * np.array([0.0, 1.0])
    return HomodyneChannel(c, m, detuning)


def cavity_transducer(kappa: float, nbar: float, omega: float = 0.0,
                      detuning: float = 0.0) -> GaussianTransducer:
    return GaussianTransducer(R=omega * np.eye(2), jumps=_thermal_pair(kappa, nbar),
                              channels=(thermal_homodyne_channel(kappa, nbar, detuning),))


def twoosc_transducer(kappa: float, gamma: float, nbar: float, omega: float, g: float) -> GaussianTransducer:
    R = omega * np.eye(4)
    R[0, 2] = R[2, 0] = g
    xi1, xi2 = _thermal_pair(gamma, nbar)
    pad = np.zeros(2)
    jumps = (np.concatenate([xi1, pad]), np.concatenate([xi2, pad]),
             np.sqrt(kappa / 2) * np.array([0, 0, 1, 1j]))
    # lam = i sqrt(kappa) b
    ch = HomodyneChannel(np.sqrt(kappa / 2) * np.array([0, 0, 0, -1.0]),
                         np.sqrt(kappa / 2) * np.array([0, 0, 1.0, 0]))
    return GaussianTransducer(R=R, jumps=jumps, channels=(ch,))


def _plus_state(n_qubits: int) -> np.ndarray:
    plus = (qubit_ket(0) + qubit_ket(1)) / np.sqrt(2)
    psi = plus
    for _ in range(n_qubits - 1):
        psi = np.kron(psi, plus)
    return projector(psi)


def _cutoffs(cfg: ScenarioConfig) -> tuple:
    if cfg.cutoffs:
        return cfg.cutoffs
    if cfg.scenario == "twoosc":
        return (default_cutoff(cfg.nbar), 6)
    return (default_cutoff(cfg.nbar),)


def _thermal_cavity_ops(layout: SpaceLayout, index: int, kappa: float, nbar: float):
    n = layout.dims[index]
    a = layout.embed(index, destroy(n))
    jumps = [np.sqrt(kappa * (nbar + 1)) * a]
    if nbar > 0:
        jumps.append(np.sqrt(kappa * nbar) * dag(a))
    lam = np.sqrt(kappa / (2 * nbar + 1)) * ((nbar + 1) * a - nbar * dag(a))
    return a, jumps, lam


def doe_qnd(cfg: ScenarioConfig) -> SMEGenerator:
    """Density-operator-expansion model of the dispersive readout (thermal-corrected rate)."""
    k, chi, n, phi = cfg.kappa, cfg.chi, cfg.nbar, cfg.phi
    rate = 2 * chi ** 2 * (2 * n + 1) / k
    meas = np.sqrt(2 * chi ** 2 / k) * np.exp(-1j * (phi + np.pi / 2)) * SIGMA_Z
    return SMEGenerator(H=np.zeros((2, 2), complex), jumps=(np.sqrt(rate) * SIGMA_Z,), meas=(meas,))


def doe_jc(cfg: ScenarioConfig) -> SMEGenerator:
    """Density-operator-expansion model of the sideband Jaynes-Cummings readout."""
    k, g, n, phi = cfg.kappa, cfg.g, cfg.nbar, cfg.phi
    jumps = [np.sqrt(4 * g ** 2 * (n + 1) / k) * SIGMA_MINUS]
    if n > 0:
        jumps.append(np.sqrt(4 * g ** 2 * n / k) * SIGMA_PLUS)
    meas = 2 * g / np.sqrt(k) * SIGMA_MINUS * np.exp(-1j * (phi + np.pi / 2))
    return SMEGenerator(H=np.zeros((2, 2), complex), jumps=tuple(jumps), meas=(meas,))


def build_qnd(cfg: ScenarioConfig) -> ScenarioModels:
    k, chi, n, phi = cfg.kappa, cfg.chi, cfg.nbar, cfg.phi
    T = cavity_transducer(k, n)
    m = solve_moments(T)
    coupling = SystemCoupling.static([chi * np.cos(phi) * SIGMA_Z, -chi * np.sin(phi) * SIGMA_Z])
    eff = effective_static(m, coupling)
    out = ScenarioModels(cfg, T, m, coupling, eff)
    rho_q = _plus_state(1)
    if "Full" in cfg.models:
        (nc,) = _cutoffs(cfg)
        layout = SpaceLayout((Qubit(), FockMode(nc)))
        _, jumps, lam = _thermal_cavity_ops(layout, 1, k, n)
        H = chi * layout.embed(0, SIGMA_Z) @ layout.embed(1, quadrature(nc, phi))
        gen = full_generator(H, jumps, [lam], layout)
        out.models["Full"] = SimModel(gen, np.kron(rho_q, thermal_state(nc, n)), 2, "Full")
    if "GAE" in cfg.models:
        out.models["GAE"] = SimModel(eff.generator(), rho_q, 2, "GAE")
    if "DOE" in cfg.models:
        out.models["DOE"] = SimModel(doe_qnd(cfg), rho_q, 2, "DOE")
    return out


def build_parity(cfg: ScenarioConfig) -> ScenarioModels:
    k, chi, n, phi = cfg.kappa, cfg.chi, cfg.nbar, cfg.phi
    T = cavity_transducer(k, n)
    m = solve_moments(T)
    Z = np.kron(SIGMA_Z, np.eye(2)) + np.kron(np.eye(2), SIGMA_Z)
    coupling = SystemCoupling.static([chi * np.cos(phi) * Z, -chi * np.sin(phi) * Z])
    eff = effective_static(m, coupling)
    out = ScenarioModels(cfg, T, m, coupling, eff, system_dims=(2, 2))
    rho_q = _plus_state(2)
    if "Full" in cfg.models:
        (nc,) = _cutoffs(cfg)
        layout = SpaceLayout((Qubit(), Qubit(), FockMode(nc)))
        _, jumps, lam = _thermal_cavity_ops(layout, 2, k, n)
        Zf = layout.embed(0, SIGMA_Z) + layout.embed(1, SIGMA_Z)
        H = chi * Zf @ layout.embed(2, quadrature(nc, phi))
        gen = full_generator(H, jumps, [lam], layout)
        out.models["Full"] = SimModel(gen, np.kron(rho_q, thermal_state(nc, n)), 4, "Full")
    if "GAE" in cfg.models:
        out.models["GAE"] = SimModel(eff.generator(), rho_q, 4, "GAE")
    return out


def build_jc(cfg: ScenarioConfig) -> ScenarioModels:
    k, g, n, phi, w = cfg.kappa, cfg.g, cfg.nbar, cfg.phi, cfg.omega
    # cavity frame: Delta = omega, local oscillator detuned by delta = -omega
    T = cavity_transducer(k, n, omega=w, detuning=-w)
    m = solve_moments(T)
    s_plus = [g / np.sqrt(2) * np.exp(1j * phi) * SIGMA_PLUS * v for v in (1, 1j)]
    s_minus = [g / np.sqrt(2) * np.exp(-1j * phi) * SIGMA_MINUS * v for v in (1, -1j)]
    coupling = SystemCoupling.oscillating(s_plus, s_minus, w)
    eff = effective_oscillating(m, coupling)
    out = ScenarioModels(cfg, T, m, coupling, eff)
    rho_q = _plus_state(1)
    if "Full" in cfg.models:
        (nc,) = _cutoffs(cfg)
        layout = SpaceLayout((Qubit(), FockMode(nc)))
        a, jumps, lam = _thermal_cavity_ops(layout, 1, k, n)
        sp_ = layout.embed(0, SIGMA_PLUS)
        X = np.exp(1j * phi) * a @ sp_
        H = g * (X + dag(X))
        gen = full_generator(H, jumps, [lam], layout)
        out.models["Full"] = SimModel(gen, np.kron(rho_q, thermal_state(nc, n)), 2, "Full")
    if "GAE" in cfg.models:
        out.models["GAE"] = SimModel(eff.generator(), rho_q, 2, "GAE")
    if "DOE" in cfg.models:
        out.models["DOE"] = SimModel(doe_jc(cfg), rho_q, 2, "DOE")
    return out


def build_twoosc(cfg: ScenarioConfig) -> ScenarioModels:
    k, g, n, chi, w, gam = cfg.kappa, cfg.g, cfg.nbar, cfg.chi, cfg.omega, cfg.gamma
    T = twoosc_transducer(k, gam, n, w, g)
    m = solve_moments(T)
    # the qubit couples to the phase quadrature p_1 (phi = -pi/2)
    coupling = SystemCoupling.static([chi * np.cos(cfg.phi) * SIGMA_Z, -chi * np.sin(cfg.phi) * SIGMA_Z,
                                      0 * SIGMA_Z, 0 * SIGMA_Z])
    eff = effective_static(m, coupling)
    out = ScenarioModels(cfg, T, m, coupling, eff)
    rho_q = _plus_state(1)
    if "Full" in cfg.models:
        c1, c2 = _cutoffs(cfg)
        osc = SpaceLayout((FockMode(c1), FockMode(c2)))
        a2, b2 = osc.embed(0, destroy(c1)), osc.embed(1, destroy(c2))
        H_osc = w * (dag(a2) @ a2 + dag(b2) @ b2) + g * osc.embed(0, position(c1)) @ osc.embed(1, position(c2))
        osc_jumps = [np.sqrt(gam * (n + 1)) * a2, np.sqrt(k) * b2]
        if n > 0:
            osc_jumps.append(np.sqrt(gam * n) * dag(a2))
        rho_osc = steady_state(SMEGenerator(H=H_osc, jumps=tuple(osc_jumps), meas=()))
        layout = SpaceLayout((Qubit(), FockMode(c1), FockMode(c2)))
        a, b = layout.embed(1, destroy(c1)), layout.embed(2, destroy(c2))
        H = (chi * layout.embed(0, SIGMA_Z) @ layout.embed(1, quadrature(c1, cfg.phi))
             + w * (dag(a) @ a + dag(b) @ b)
             + g * layout.embed(1, position(c1)) @ layout.embed(2, position(c2)))
        jumps = [np.sqrt(gam * (n + 1)) * a, np.sqrt(k) * b]
        if n > 0:
            jumps.append(np.sqrt(gam * n) * dag(a))
        gen = full_generator(H, jumps, [1j * np.sqrt(k) * b], layout)
        out.models["Full"] = SimModel(gen, np.kron(rho_q, rho_osc), 2, "Full")
    if "GAE" in cfg.models:
        out.models["GAE"] = SimModel(eff.generator(), rho_q, 2, "GAE")
    return out


BUILDERS = {"qnd": build_qnd, "parity": build_parity, "jc": build_jc, "twoosc": build_twoosc}


def build(cfg: ScenarioConfig) -> ScenarioModels:
    validate(cfg)
    return BUILDERS[cfg.scenario](cfg)


# -- numerical validity --------------------------------------------------------

class NumericalValidityError(RuntimeError):
    pass


RESIDUAL_TOL = 1e-10
EIG_FLOOR = -1e-9


def validity_summary(sm: ScenarioModels) -> dict:
    """Solver residuals, covariance eigenvalue floors and positivity certificates."""
    m = sm.moments
    gap = m.gamma_u - m.gamma_c
    out = {
        "lyapunov_residual": lyapunov_residual(m.A, m.N_diff, m.gamma_u),
        "riccati_residual": float(m.riccati_info.get("residual", 0.0)),
        "initial_condition_gap": float(m.initial_condition_gap),
        "min_eig_gamma_u_minus_gamma_c": float(np.linalg.eigvalsh(0.5 * (gap + gap.T)).min()),
        "min_eig_gamma_u_heisenberg": heisenberg_min_eig(m.gamma_u, m.sigma),
        "min_eig_gamma_c_heisenberg": heisenberg_min_eig(m.gamma_c, m.sigma),
        "certificate": sm.effective.certificate.as_dict(),
        "operator_certificate": sm.effective.operator_certificate.as_dict(),
    }
    out["pass"] = bool(out["lyapunov_residual"] <= RESIDUAL_TOL and out["riccati_residual"] <= RESIDUAL_TOL
                       and out["min_eig_gamma_u_minus_gamma_c"] >= EIG_FLOOR
                       and out["min_eig_gamma_u_heisenberg"] >= EIG_FLOOR
                       and out["min_eig_gamma_c_heisenberg"] >= EIG_FLOOR
                       and sm.effective.certificate.passed)
    return out


def check_validity(sm: ScenarioModels) -> dict:
    summary = validity_summary(sm)
    if not summary["pass"]:
        raise NumericalValidityError(f"numerical validity checks failed: {summary}")
    return summary


# -- reports -------------------------------------------------------------------

@dataclass
class RunReport:
    """Config echo, per-model summaries and the list of emitted files."""

    config: ScenarioConfig
    summaries: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    backend: str = ""

    def as_dict(self) -> dict:
        return {"config": config_to_text(self.config), "config_hash": config_hash(self.config),
                "backend": self.backend, "summaries": self.summaries, "files": sorted(self.files)}


__all__ = [
    "ConfigError", "NumericalValidityError", "validity_summary", "check_validity", "ScenarioConfig", "ScenarioModels", "RunReport", "make_config", "parse_config",
    "config_to_text", "config_hash", "validate", "build", "build_qnd", "build_parity", "build_jc",
    "build_twoosc", "doe_qnd", "doe_jc", "cavity_transducer", "twoosc_transducer",
    "thermal_homodyne_channel",
]
