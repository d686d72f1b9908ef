"""Ito integration of stochastic master equations and paired trajectory ensembles.

Full models are driven by Wiener increments and produce homodyne currents
``dI_m = <lam_m + lam_m^dag> dt + dW_m``. Reduced models are paired with a
full trajectory in one of two ways:

``"noise"``
    the reduced model reuses the full model's Wiener increments ``dW_m``;
``"record"``
    the reduced model filters the full model's measured current, using the
    innovation ``dI_m - <lam_m + lam_m^dag>_reduced dt`` as its noise.
"""

from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import _backend
from .hilbert import SMEGenerator, dag, meas_superop

WORKERS_ENV = "GAUSSELIM_WORKERS"
PAIRINGS = ("record", "noise")


class StepSizeError(RuntimeError):
    """The trace drifted too far within one step; reduce ``dt``."""


class StepSizeWarning(UserWarning):
    pass


class PairingError(ValueError):
    pass


@dataclass(frozen=True)
class IntegrationConfig:
    """Time grid and bookkeeping for trajectory runs (times in units of ``1/kappa``).

    Attributes
    ----------
    dt, T : float
        Step and total duration; ``T`` is rounded to a whole number of steps.
    seed : int
        Key of the counter-based noise streams.
    renormalize_every : int
        Steps between trace renormalizations.
    record_every : int
        Steps between stored reduced states.
    """

    dt: float = 0.01
    T: float = 50.0
    seed: int = 0
    renormalize_every: int = 1
    scheme: str = "EulerMaruyama"
    record_every: int = 10
    trace_tol: float = 1e-3

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if self.scheme != "EulerMaruyama":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.renormalize_every < 1 or self.record_every < 1:
            raise ValueError("renormalize_every and record_every must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def n_records(self) -> int:
        return self.n_steps // self.record_every + 1

    @property
    def record_times(self) -> np.ndarray:
        return np.arange(self.n_records) * self.record_every * self.dt


@dataclass(frozen=True)
class TrajectoryRecord:
    """One trajectory: per-step currents and noise, thinned system states."""

    times: np.ndarray
    dt: float
    currents: np.ndarray      # (n_steps, n_channels)
    increments: np.ndarray    # (n_steps, n_channels) Wiener increments or innovations
    states: np.ndarray        # (n_records, d_sys, d_sys)
    seed: int
    index: int
    tag: str

    @property
    def n_channels(self) -> int:
        return self.currents.shape[1]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class PairedRecord:
    index: int
    full: TrajectoryRecord
    reduced: dict = field(default_factory=dict)


class SimModel:
    """A generator prepared for the trajectory kernel.

    Parameters
    ----------
    generator : SMEGenerator
        Full or reduced SME.
    rho0 : ndarray
        Initial state on the generator's space.
    d_sys : int
        Dimension of the leading tensor factor(s) kept in the stored states.
    tag : str
        Label such as ``"Full"``, ``"GAE"`` or ``"DOE"``.
    """

    def __init__(self, generator: SMEGenerator, rho0: np.ndarray, d_sys: int, tag: str):
        self.generator = generator
        self.rho0 = np.ascontiguousarray(rho0, dtype=complex)
        self.d_sys = int(d_sys)
        self.tag = tag
        d = generator.dim
        if self.rho0.shape != (d, d):
            raise ValueError("initial state does not match the generator dimension")
        if d % self.d_sys:
            raise ValueError("d_sys must divide the total dimension")
        H = np.asarray(generator.H, dtype=complex)
        self.h_diag = np.real(np.diag(H)).copy()
        K = -1j * (H - np.diag(np.diag(H)))
        for j in generator.jumps:
            K = K - 0.5 * dag(j) @ j
        ops = [K, *generator.meas, *generator.jumps]
        mats = [sp.csr_matrix(op) for op in ops]
        for mtx in mats:
            mtx.eliminate_zeros()
        self.data = np.ascontiguousarray(np.concatenate([m.data for m in mats]), dtype=np.complex128)
        self.indices = np.ascontiguousarray(np.concatenate([m.indices for m in mats]), dtype=np.intc)
        offs = np.cumsum([0] + [m.nnz for m in mats[:-1]])
        self.indptr = np.ascontiguousarray(
            np.stack([m.indptr + o for m, o in zip(mats, offs)]), dtype=np.intc)
        self.n_meas = len(generator.meas)
        self.n_jump = len(generator.jumps)
        self.scale = float(np.abs(K).sum(axis=0).max())

    @property
    def dim(self) -> int:
        return self.generator.dim

    def phase(self, dt: float) -> np.ndarray:
        h = self.h_diag
        return np.ascontiguousarray(np.exp(-1j * (h[:, None] - h[None, :]) * dt))

    def run(self, inc: np.ndarray, mode: int, config: IntegrationConfig, kernel=None):
        """Integrate from ``rho0``; returns ``(out_inc, states, final_full_state)``."""
        if config.dt * self.scale > 0.05:
            warnings.warn(f"dt * generator scale = {config.dt * self.scale:.3g} exceeds 0.05 "
                          f"for model {self.tag}", StepSizeWarning, stacklevel=3)
        kernel = kernel or _backend.integrate
        inc = np.ascontiguousarray(inc, dtype=np.float64)
        out_inc = np.zeros_like(inc)
        states = np.zeros((inc.shape[0] // config.record_every + 1, self.d_sys, self.d_sys), complex)
        rho = self.rho0.copy()
        failed = kernel(self.data, self.indices, self.indptr, self.n_meas, self.n_jump,
                        self.phase(config.dt), rho, float(config.dt), inc, int(mode),
                        int(config.record_every), self.d_sys, out_inc, states,
                        int(config.renormalize_every), float(config.trace_tol))
        if failed >= 0:
            raise StepSizeError(f"model {self.tag}: trace drift above {config.trace_tol:g} "
                                f"at step {failed} (dt={config.dt:g})")
        return out_inc, states, rho


# -- single steps (reference implementation) -----------------------------------

def step(rho: np.ndarray, generator: SMEGenerator, dW: Sequence[float], dt: float,
         trace_tol: float = 1e-3) -> np.ndarray:
    """One plain Euler-Maruyama step, then Hermitize and renormalize."""
    dW = np.atleast_1d(np.asarray(dW, dtype=float))
    if dW.size != generator.n_channels:
        raise ValueError("one Wiener increment per channel is required")
    new = rho + generator.deterministic(rho) * dt
    for w, lam in zip(dW, generator.meas):
        if w != 0.0:
            new = new + meas_superop(lam, rho) * w
    new = 0.5 * (new + dag(new))
    tr = np.trace(new).real
    if not abs(tr - 1.0) <= trace_tol:
        raise StepSizeError(f"trace drift {tr - 1.0:.3g} exceeds {trace_tol:g}")
    return new / tr


# -- noise ---------------------------------------------------------------------

def wiener_increments(seed: int, index: int, n_steps: int, n_channels: int, dt: float) -> np.ndarray:
    """``N(0, dt)`` increments from a Philox stream keyed by ``(seed, index)``."""
    bitgen = np.random.Philox(key=np.array([seed, index], dtype=np.uint64))
    return np.random.Generator(bitgen).standard_normal((n_steps, n_channels)) * np.sqrt(dt)


# -- trajectories --------------------------------------------------------------

def simulate_full(model: SimModel, config: IntegrationConfig, index: int = 0,
                  kernel=None) -> TrajectoryRecord:
    """Noise-driven trajectory producing homodyne currents."""
    dW = wiener_increments(config.seed, index, config.n_steps, model.n_meas, config.dt)
    currents, states, _ = model.run(dW, 0, config, kernel)
    return TrajectoryRecord(times=config.record_times, dt=config.dt, currents=currents,
                            increments=dW, states=states, seed=config.seed, index=index,
                            tag=model.tag)


def filter_reduced(model: SimModel, record: TrajectoryRecord, config: IntegrationConfig,
                   kernel=None, pairing: str = "record") -> TrajectoryRecord:
    """Propagate ``model`` alongside ``record``.

    ``pairing="record"`` conditions on the currents stored in ``record``
    (innovation filtering); ``pairing="noise"`` reuses its Wiener increments
    instead, so the reduced model produces its own currents.
    """
    if pairing not in PAIRINGS:
        raise ValueError(f"pairing must be one of {PAIRINGS}")
    if model.n_meas != record.n_channels:
        raise PairingError(f"model {model.tag} has {model.n_meas} channels, "
                           f"record has {record.n_channels}")
    if not np.isclose(record.dt, config.dt) or record.currents.shape[0] != config.n_steps:
        raise PairingError("record time grid does not match the integration config")
    if pairing == "noise":
        currents, states, _ = model.run(record.increments, 0, config, kernel)
        return TrajectoryRecord(times=config.record_times, dt=config.dt, currents=currents,
                                increments=record.increments, states=states, seed=record.seed,
                                index=record.index, tag=model.tag)
    innov, states, _ = model.run(record.currents, 1, config, kernel)
    return TrajectoryRecord(times=config.record_times, dt=config.dt, currents=record.currents,
                            increments=innov, states=states, seed=record.seed,
                            index=record.index, tag=model.tag)


def unconditional(model: SimModel, config: IntegrationConfig, kernel=None) -> np.ndarray:
    """Noise-free run of the same scheme: the exact ensemble mean of its trajectories."""
    zeros = np.zeros((config.n_steps, model.n_meas))
    _, states, _ = model.run(zeros, 0, config, kernel)
    return states


def integrated_current(record: TrajectoryRecord, T_m: float) -> np.ndarray:
    """``J_m = sum dI_m`` over ``[0, T_m]`` (one value per channel)."""
    n = int(round(T_m / record.dt))
    if n > record.currents.shape[0]:
        raise ValueError("T_m exceeds the record duration")
    return record.currents[:n].sum(axis=0)


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_ensemble(full: SimModel, reduced: Mapping[str, SimModel], n_traj: int,
                 config: IntegrationConfig, workers: int | None = None,
                 kernel=None, pairing: str = "record") -> list[PairedRecord]:
    """Simulate ``n_traj`` full trajectories and filter each reduced model on them.

    Trajectory ``k`` always uses noise stream ``(seed, k)``, so the output is
    independent of ``workers``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    for name, mdl in reduced.items():
        if mdl.n_meas != full.n_meas:
            raise PairingError(f"model {name} has {mdl.n_meas} channels, full model has {full.n_meas}")

    def one(k: int) -> PairedRecord:
        rec = simulate_full(full, config, k, kernel)
        red = {name: filter_reduced(mdl, rec, config, kernel, pairing) for name, mdl in reduced.items()}
        return PairedRecord(index=k, full=rec, reduced=red)

    workers = workers or default_workers()
    if workers == 1:
        return [one(k) for k in range(n_traj)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(n_traj)))


# -- output --------------------------------------------------------------------

def bloch_columns(rho: np.ndarray) -> list[float]:
    """``<sigma_x>, <sigma_y>, <sigma_z>`` of every qubit factor of a ``2^n`` state."""
    from .hilbert import SIGMA_X, SIGMA_Y, SIGMA_Z
    d = rho.shape[0]
    n = int(round(np.log2(d)))
    if 2 ** n != d:
        return []
    out = []
    for q in range(n):
        for P in (SIGMA_X, SIGMA_Y, SIGMA_Z):
            op = np.kron(np.kron(np.eye(2 ** q), P), np.eye(2 ** (n - q - 1)))
            out.append(float(np.real(np.trace(op @ rho))))
    return out


def write_trajectory_csv(path, record: TrajectoryRecord, stride: int) -> None:
    """Rows at stored times: ``t``, current increments over the preceding interval, Bloch vectors."""
    d = record.states.shape[1]
    n = int(round(np.log2(d)))
    bloch_names = [f"{ax}{q + 1}" for q in range(n) for ax in ("sx", "sy", "sz")] if 2 ** n == d else []
    dI = np.add.reduceat(record.currents, np.arange(0, record.currents.shape[0], stride), axis=0) \
        if record.currents.shape[0] else np.zeros((0, record.n_channels))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"dI{m + 1}" for m in range(record.n_channels)] + bloch_names)
        for r, t in enumerate(record.times):
            inc = dI[r - 1] if r > 0 else np.zeros(record.n_channels)
            w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in inc]
                       + [f"{x:.17g}" for x in bloch_columns(record.states[r])])


def lindblad_rhs(generator: SMEGenerator):
    """``rho -> L rho`` as a flat real-valued ODE right-hand side, for reference solvers."""
    d = generator.dim

    def f(_t, y):
        rho = (y[: d * d] + 1j * y[d * d:]).reshape(d, d)
        out = generator.deterministic(rho).ravel()
        return np.concatenate([out.real, out.imag])

    return f
