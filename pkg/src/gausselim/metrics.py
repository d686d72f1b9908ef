"""Trace distances, entanglement and integrated-current statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks

from .sde import PairedRecord, TrajectoryRecord, integrated_current


class EmptySelection(ValueError):
    """No trajectory passed the postselection threshold."""


def trace_distance(rho1: np.ndarray, rho2: np.ndarray) -> float:
    """``D = (1/2) sum |eig(rho1 - rho2)|``."""
    rho1 = np.asarray(rho1)
    rho2 = np.asarray(rho2)
    if rho1.shape != rho2.shape:
        raise ValueError(f"states on different spaces: {rho1.shape} vs {rho2.shape}")
    diff = rho1 - rho2
    ev = np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))
    return float(min(1.0, 0.5 * np.abs(ev).sum()))


def bloch_vector(rho: np.ndarray) -> np.ndarray:
    return np.array([2 * rho[0, 1].real, -2 * rho[0, 1].imag, (rho[0, 0] - rho[1, 1]).real])


def trace_distance_qubit(rho1: np.ndarray, rho2: np.ndarray) -> float:
    """Single-qubit trace distance from Bloch vectors: ``|r1 - r2| / 2``."""
    if np.shape(rho1) != (2, 2) or np.shape(rho2) != (2, 2):
        raise ValueError("Bloch-vector form needs single-qubit states")
    return float(0.5 * np.linalg.norm(bloch_vector(rho1) - bloch_vector(rho2)))


def _batched_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a - b
    if diff.shape[-1] == 2:
        # closed form for traceless 2x2 Hermitian differences
        x = diff[..., 0, 1]
        z = 0.5 * (diff[..., 0, 0] - diff[..., 1, 1]).real
        return np.sqrt(np.abs(x) ** 2 + z ** 2)
    ev = np.linalg.eigvalsh(0.5 * (diff + np.conj(np.swapaxes(diff, -1, -2))))
    return 0.5 * np.abs(ev).sum(axis=-1)


@dataclass(frozen=True)
class DistanceSeries:
    """Ensemble statistics of ``D(t)`` between the full and one reduced model.

    Attributes
    ----------
    times : ndarray
        Recording times.
    per_trajectory : ndarray
        ``(n_traj, n_times)`` distances.
    mean, stderr : ndarray
        Ensemble mean and its standard error at each time.
    time_average : float
        Mean of ``mean(t)`` over ``[0, T_m]``.
    time_average_stderr : float
        Standard error of the per-trajectory time averages.
    """

    times: np.ndarray
    per_trajectory: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    time_average: float
    time_average_stderr: float

    def block_averages(self, n_blocks: int) -> np.ndarray:
        per = self.per_trajectory.mean(axis=1)
        return np.array([blk.mean() for blk in np.array_split(per, n_blocks)])


def average_distance(records: Sequence[PairedRecord], model: str,
                     T_m: float | None = None) -> DistanceSeries:
    """Mean over trajectories at each time, then time average over ``[0, T_m]``."""
    if len(records) < 2:
        raise ValueError("need at least two trajectories")
    full = np.stack([r.full.states for r in records])
    red = np.stack([r.reduced[model].states for r in records])
    times = records[0].full.times
    D = _batched_distance(full, red)
    if T_m is not None:
        keep = times <= T_m + 1e-12
        D, times = D[:, keep], times[keep]
    n = D.shape[0]
    mean = D.mean(axis=0)
    stderr = D.std(axis=0, ddof=1) / np.sqrt(n)
    per = D.mean(axis=1)
    return DistanceSeries(times=times, per_trajectory=D, mean=mean, stderr=stderr,
                          time_average=float(per.mean()),
                          time_average_stderr=float(per.std(ddof=1) / np.sqrt(n)))


def partial_transpose(rho: np.ndarray, dims: Sequence[int], sys: int = 0) -> np.ndarray:
    dims = list(dims)
    if int(np.prod(dims)) != rho.shape[0] or not 0 <= sys < len(dims):
        raise ValueError("invalid bipartition")
    n = len(dims)
    t = rho.reshape(dims + dims)
    axes = list(range(2 * n))
    axes[sys], axes[sys + n] = axes[sys + n], axes[sys]
    return t.transpose(axes).reshape(rho.shape)


def log_negativity(rho: np.ndarray, dims: Sequence[int] = (2, 2), sys: int = 0) -> float:
    """``E_N = log2 || rho^{T_A} ||_1``."""
    pt = partial_transpose(np.asarray(rho), dims, sys)
    ev = np.linalg.eigvalsh(0.5 * (pt + pt.conj().T))
    return float(max(0.0, np.log2(np.abs(ev).sum())))


@dataclass(frozen=True)
class PostselectionResult:
    threshold: float
    success_probability: float
    n_kept: int
    state: np.ndarray
    log_negativity: float


def _records(records) -> list[TrajectoryRecord]:
    return [r.full if isinstance(r, PairedRecord) else r for r in records]


def integrated_currents(records, T_m: float, channel: int = 0) -> np.ndarray:
    return np.array([integrated_current(r, T_m)[channel] for r in _records(records)])


def state_at(record: TrajectoryRecord, T_m: float) -> np.ndarray:
    idx = int(np.argmin(np.abs(record.times - T_m)))
    if abs(record.times[idx] - T_m) > 0.5 * (record.times[1] - record.times[0] if record.times.size > 1 else 1):
        raise ValueError("no stored state near T_m")
    return record.states[idx]


def postselect(records, T_m: float, nu: float, dims: Sequence[int] = (2, 2)) -> PostselectionResult:
    """Keep trajectories with ``|J(T_m)| <= nu`` and average their states at ``T_m``."""
    recs = _records(records)
    J = integrated_currents(recs, T_m)
    keep = np.abs(J) <= nu
    if not keep.any():
        raise EmptySelection(f"no trajectory has |J| <= {nu:g}")
    state = np.mean([state_at(r, T_m) for r, k in zip(recs, keep) if k], axis=0)
    return PostselectionResult(threshold=float(nu), success_probability=float(keep.mean()),
                               n_kept=int(keep.sum()), state=state,
                               log_negativity=log_negativity(state, dims))


def postselection_sweep(records, T_m: float, nus: Sequence[float],
                        dims: Sequence[int] = (2, 2)) -> list[PostselectionResult | None]:
    """Postselect for every threshold; empty selections become ``None``."""
    out = []
    for nu in nus:
        try:
            out.append(postselect(records, T_m, nu, dims))
        except EmptySelection:
            out.append(None)
    return out


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def peaks(self, prominence: float = 0.1, smooth: int = 3) -> np.ndarray:
        """Local maxima with prominence above a fraction of the tallest bin."""
        c = self.counts.astype(float)
        if smooth > 1:
            c = np.convolve(c, np.ones(smooth) / smooth, mode="same")
        padded = np.concatenate([[0.0], c, [0.0]])
        idx, _ = find_peaks(padded, prominence=prominence * padded.max())
        return self.centers[idx - 1]


def current_histogram(records, T_m: float, bins="fd", channel: int = 0) -> Histogram:
    """Histogram of ``J(T_m)``; Freedman-Diaconis binning unless ``bins`` says otherwise."""
    J = integrated_currents(records, T_m, channel)
    if J.size < 1:
        raise ValueError("need at least one record")
    counts, edges = np.histogram(J, bins=bins)
    return Histogram(edges=edges, counts=counts)
