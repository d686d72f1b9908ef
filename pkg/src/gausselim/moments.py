"""Moment dynamics of a Gaussian bosonic transducer.

The transducer consists of ``N`` modes with canonical vector
``r = (q1, p1, ..., qN, pN)``, a quadratic Hamiltonian ``H = r^T R r / 2``,
linear jump operators ``j_i = xi_i^T r`` and homodyne channels
``lambda_m = (c_m + i m_m)^T r``. Covariances follow the convention
``Gamma_ij = <{r_i, r_j}> - 2 x_i x_j`` so that the vacuum has ``Gamma = I``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import solve_ivp

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]

HEISENBERG_FLOOR = -1e-9
COARSE_GRAIN_RATIO = 10.0


class MomentError(Exception):
    """Base class for failures of the moment solvers."""


class ConstructionError(MomentError, ValueError):
    pass


class NonStableDrift(MomentError):
    """The drift matrix has an eigenvalue outside the open left half-plane."""

    def __init__(self, eigenvalue: complex, message: str | None = None):
        self.eigenvalue = eigenvalue
        super().__init__(message or f"drift is not Hurwitz: eigenvalue {eigenvalue!r}")


class RiccatiDivergence(MomentError):
    pass


class InvalidCovariance(MomentError):
    pass


class CoarseGrainingWarning(UserWarning):
    """Detuning is not fast compared to the transducer relaxation."""


def symplectic_form(n_modes: int) -> Array:
    """Block-diagonal symplectic matrix with ``[[0, 1], [-1, 0]]`` blocks."""
    if n_modes < 1:
        raise ConstructionError("n_modes must be positive")
    return np.kron(np.eye(n_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


@dataclass(frozen=True)
class HomodyneChannel:
    """Homodyne channel ``lambda = (c + i m)^T r(t)``.

    With a local-oscillator detuning the quadratures rotate as
    ``r(t) = (cos(Dt) I + sin(Dt) sigma) r``, which moves the time dependence
    into ``c(t) = c_c cos(Dt) + c_s sin(Dt)`` (and likewise for ``m``).
    """

    c: Array
    m: Array
    detuning: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        m = np.asarray(self.m, dtype=float).ravel()
        if c.shape != m.shape or c.size % 2:
            raise ConstructionError("c and m must be real vectors of equal even length")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "detuning", float(self.detuning))

    @property
    def dim(self) -> int:
        return self.c.size

    @property
    def xi(self) -> NDArray[np.complex128]:
        """Coefficient vector of the measured operator at ``t = 0``."""
        return self.c + 1j * self.m

    # cosine/sine quadrature pairs
    @property
    def c_cos(self) -> Array:
        return self.c

    @property
    def c_sin(self) -> Array:
        return symplectic_form(self.dim // 2).T @ self.c

    @property
    def m_cos(self) -> Array:
        return self.m

    @property
    def m_sin(self) -> Array:
        return symplectic_form(self.dim // 2).T @ self.m

    # c(t) = c_plus exp(iDt) + c_minus exp(-iDt)
    @property
    def c_plus(self) -> NDArray[np.complex128]:
        return 0.5 * (self.c_cos - 1j * self.c_sin)

    @property
    def c_minus(self) -> NDArray[np.complex128]:
        return np.conj(self.c_plus)

    @property
    def m_plus(self) -> NDArray[np.complex128]:
        return 0.5 * (self.m_cos - 1j * self.m_sin)

    @property
    def m_minus(self) -> NDArray[np.complex128]:
        return np.conj(self.m_plus)

    def c_at(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        return self.c_cos * np.cos(self.detuning * t) + self.c_sin * np.sin(self.detuning * t)

    def m_at(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        return self.m_cos * np.cos(self.detuning * t) + self.m_sin * np.sin(self.detuning * t)


@dataclass(frozen=True)
class GaussianTransducer:
    """Quadratic Hamiltonian, linear jumps and homodyne channels on N modes."""

    R: Array
    jumps: tuple = ()
    channels: tuple = ()
    containment_tol: float = 1e-9

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape[0] != R.shape[1] or R.shape[0] % 2:
            raise ConstructionError("R must be a square matrix of even size")
        asym = np.max(np.abs(R - R.T), initial=0.0)
        if asym > 1e-9 * max(1.0, np.max(np.abs(R), initial=0.0)):
            raise ConstructionError(f"R is not symmetric (max asymmetry {asym:.3g})")
        R = 0.5 * (R + R.T)
        jumps = tuple(np.asarray(j, dtype=complex).ravel() for j in self.jumps)
        for j in jumps:
            if j.size != R.shape[0]:
                raise ConstructionError("jump vector has the wrong length")
        channels = tuple(self.channels)
        for ch in channels:
            if ch.dim != R.shape[0]:
                raise ConstructionError("channel vectors have the wrong length")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "channels", channels)
        if channels:
            self._check_containment()

    @property
    def n_modes(self) -> int:
        return self.R.shape[0] // 2

    @property
    def sigma(self) -> Array:
        return symplectic_form(self.n_modes)

    def _check_containment(self):
        # Each measured operator needs a matching Lindblad term; with thermal
        # baths lambda is not itself a jump, so require D[lambda] to be
        # contained in the total decoherence instead of literal equality.
        decay = sum((np.outer(j, j.conj()) for j in self.jumps),
                    np.zeros((self.R.shape[0],) * 2, dtype=complex))
        meas = np.zeros_like(decay)
        for ch in self.channels:
            if ch.detuning == 0.0:
                vecs = [ch.xi]
            else:
                # each coarse-grained half carries weight 1/2
                vecs = [(ch.c_cos + 1j * ch.m_cos) / np.sqrt(2), (ch.c_sin + 1j * ch.m_sin) / np.sqrt(2)]
            for v in vecs:
                meas += np.outer(v, v.conj())
        scale = max(1.0, np.max(np.abs(decay), initial=0.0))
        low = np.linalg.eigvalsh(decay - meas).min()
        if low < -self.containment_tol * scale:
            raise ConstructionError(
                "measurement channels are not backed by Lindblad terms "
                f"(min eigenvalue {low:.3g})")


@dataclass(frozen=True)
class MomentSolution:
    """Drift, diffusion and steady covariances of a transducer."""

    A: Array
    N_diff: Array
    gamma_u: Array
    gamma_c: Array
    Q: Array
    sigma: Array
    channels: tuple = ()
    initial_condition_gap: float = 0.0
    riccati_info: dict = field(default_factory=dict)
    source_channels: tuple = ()  # channels as given, before coarse-graining

    @property
    def n_modes(self) -> int:
        return self.A.shape[0] // 2


def build_drift(t: GaussianTransducer) -> Array:
    """``A = sigma R - (i/2) sigma sum_i (xi_i^dag xi_i - xi_i^T xi_i^*)``.

    The outer products are read with ``xi`` as a row vector, i.e. the matrix
    element ``(xi^dag xi)_jk = conj(xi_j) xi_k``.
    """
    sigma = t.sigma
    acc = np.zeros((t.R.shape[0],) * 2, dtype=complex)
    for xi in t.jumps:
        acc += np.outer(xi.conj(), xi) - np.outer(xi, xi.conj())
    A = sigma @ t.R - 0.5j * sigma @ acc
    residue = np.max(np.abs(A.imag), initial=0.0)
    if residue > 1e-12 * max(1.0, np.max(np.abs(A.real), initial=0.0)):
        raise ConstructionError(f"drift has imaginary residue {residue:.3g}")
    return np.ascontiguousarray(A.real)


def build_diffusion(t: GaussianTransducer) -> Array:
    """``N = (1/2) sigma sum_i (xi_i^dag xi_i + xi_i^T xi_i^*) sigma^T``."""
    sigma = t.sigma
    acc = np.zeros((t.R.shape[0],) * 2, dtype=complex)
    for xi in t.jumps:
        acc += np.outer(xi.conj(), xi) + np.outer(xi, xi.conj())
    N = 0.5 * sigma @ acc @ sigma.T
    N = N.real
    return 0.5 * (N + N.T)


def is_hurwitz(A: Array) -> tuple[bool, complex]:
    eig = np.linalg.eigvals(A)
    worst = eig[np.argmax(eig.real)]
    norm = np.max(np.abs(A), initial=0.0)
    return bool(worst.real < -1e-12 * max(norm, 1e-300)), complex(worst)


def _require_hurwitz(A: Array) -> None:
    ok, worst = is_hurwitz(A)
    if not ok:
        raise NonStableDrift(worst)


def solve_sylvester_kron(L: Array, C: Array) -> Array:
    """Solve ``L X + X L^T + C = 0`` by a dense Kronecker-sum solve."""
    n = L.shape[0]
    eye = np.eye(n)
    # row-major vec: vec(L X) = (L kron I) vec X, vec(X L^T) = (I kron L) vec X
    K = np.kron(L, eye) + np.kron(eye, L)
    X = np.linalg.solve(K, -np.asarray(C).reshape(-1)).reshape(n, n)
    return X


def lyapunov_steady(A: Array, N_diff: Array) -> Array:
    """Steady covariance solving ``A G + G A^T + 2N = 0``."""
    _require_hurwitz(A)
    G = solve_sylvester_kron(A, 2.0 * N_diff)
    return 0.5 * (G + G.T)


def lyapunov_residual(A: Array, N_diff: Array, G: Array) -> float:
    res = A @ G + G @ A.T + 2.0 * N_diff
    return _rel(res, 2.0 * N_diff)


def _rel(res: Array, ref: Array) -> float:
    scale = np.max(np.abs(ref), initial=0.0)
    r = np.max(np.abs(res), initial=0.0)
    return r / scale if scale > 0 else r


def _channel_pieces(G: Array, sigma: Array, channels: Sequence[HomodyneChannel]):
    return [(G @ ch.c - sigma @ ch.m, ch.c) for ch in channels]


def riccati_rhs(G: Array, A: Array, N_diff: Array, sigma: Array,
                channels: Sequence[HomodyneChannel]) -> Array:
    """Right-hand side of the conditional covariance equation (static channels)."""
    out = A @ G + G @ A.T + 2.0 * N_diff
    for v, _ in _channel_pieces(G, sigma, channels):
        out -= 2.0 * np.outer(v, v)
    return out


def q_matrix(A: Array, G: Array, sigma: Array, channels: Sequence[HomodyneChannel]) -> Array:
    Q = A.copy()
    for v, c in _channel_pieces(G, sigma, channels):
        Q -= 2.0 * np.outer(v, c)
    return Q


def coarse_grain_channel(channel: HomodyneChannel, A: Array | None = None,
                         ratio: float = COARSE_GRAIN_RATIO) -> tuple[HomodyneChannel, HomodyneChannel]:
    """Split a detuned channel into two static channels of weight ``1/sqrt(2)``.

    The validity check compares ``|detuning|`` with the fastest relaxation
    rate of ``A`` (largest ``|Re eig A|``); a warning is emitted when the
    separation is below ``ratio``.
    """
    if channel.detuning == 0.0:
        raise ValueError("coarse-graining needs a nonzero detuning")
    if A is not None:
        rate = np.max(np.abs(np.linalg.eigvals(A).real), initial=0.0)
        if abs(channel.detuning) < ratio * rate:
            warnings.warn(
                f"|detuning|={abs(channel.detuning):.3g} is below {ratio:g}x the "
                f"transducer relaxation rate {rate:.3g}; coarse-graining may be inaccurate",
                CoarseGrainingWarning, stacklevel=2)
    w = 1.0 / np.sqrt(2.0)
    return (HomodyneChannel(w * channel.c_cos, w * channel.m_cos),
            HomodyneChannel(w * channel.c_sin, w * channel.m_sin))


def static_channels(t: GaussianTransducer, A: Array | None = None,
                    ratio: float = COARSE_GRAIN_RATIO) -> tuple[HomodyneChannel, ...]:
    out: list[HomodyneChannel] = []
    for ch in t.channels:
        if ch.detuning == 0.0:
            out.append(ch)
        else:
            out.extend(coarse_grain_channel(ch, A, ratio))
    return tuple(out)


def heisenberg_min_eig(G: Array, sigma: Array) -> float:
    return float(np.linalg.eigvalsh(G + 1j * sigma).min())


def _relax(G0: Array, A, N_diff, sigma, channels, tol: float, t_max: float):
    """Integrate the Riccati ODE from ``G0`` until its derivative is below ``tol``."""
    n = A.shape[0]
    scale = np.max(np.abs(2.0 * N_diff), initial=0.0) or 1.0
    rate = max(np.max(np.abs(np.linalg.eigvals(A).real)), 1e-12)
    chunk = 5.0 / rate
    # stacked channel vectors: the loop in riccati_rhs dominates the cost otherwise
    C = np.array([ch.c for ch in channels], dtype=float).T
    SM = sigma @ np.array([ch.m for ch in channels], dtype=float).T
    N2 = 2.0 * N_diff

    def f(_t, y):
        G = y.reshape(n, n)
        G = 0.5 * (G + G.T)
        AG = A @ G
        V = G @ C - SM
        return (AG + AG.T + N2 - 2.0 * (V @ V.T)).ravel()

    G = G0.copy()
    t = 0.0
    while True:
        d = np.max(np.abs(f(0.0, G.ravel())))
        if d <= tol * scale:
            return G, t
        if t >= t_max:
            raise RiccatiDivergence(
                f"Riccati relaxation did not converge by t={t:g} (|dG/dt|={d:.3g})")
        sol = solve_ivp(f, (0.0, chunk), G.ravel(), method="RK45", rtol=1e-8, atol=1e-12 * scale)
        if not sol.success:
            raise RiccatiDivergence(sol.message)
        G = sol.y[:, -1].reshape(n, n)
        G = 0.5 * (G + G.T)
        if not np.all(np.isfinite(G)):
            raise RiccatiDivergence("Riccati integration produced non-finite values")
        t += chunk


def _newton_polish(G, A, N_diff, sigma, channels, max_iter: int = 8):
    # the Frechet derivative of the Riccati map at G is X -> Q X + X Q^T
    scale = np.max(np.abs(2.0 * N_diff), initial=0.0) or 1.0
    for _ in range(max_iter):
        F = riccati_rhs(G, A, N_diff, sigma, channels)
        if np.max(np.abs(F)) <= 1e-14 * scale:
            break
        Q = q_matrix(A, G, sigma, channels)
        dG = solve_sylvester_kron(Q, F)
        G = G + 0.5 * (dG + dG.T)
    return G


def riccati_steady(A: Array, N_diff: Array, channels: Sequence[HomodyneChannel],
                   sigma: Array, gamma_u: Array | None = None, *,
                   relax_tol: float = 1e-5, t_max: float | None = None,
                   check_uniqueness: bool = True) -> tuple[Array, Array, dict]:
    """Stationary conditional covariance and the matrix ``Q``.

    Channels must be static (coarse-grain detuned ones first). Returns
    ``(gamma_c, Q, info)``; ``info`` carries the relative residual and the
    gap between relaxations started from ``gamma_u`` and ``10 gamma_u``.
    """
    _require_hurwitz(A)
    channels = tuple(channels)
    for ch in channels:
        if ch.detuning != 0.0:
            raise ValueError("riccati_steady expects static channels")
    if gamma_u is None:
        gamma_u = lyapunov_steady(A, N_diff)
    info: dict = {"residual": 0.0, "initial_condition_gap": 0.0, "relax_time": 0.0}
    if not channels:
        return gamma_u.copy(), A.copy(), info
    rate = max(np.max(np.abs(np.linalg.eigvals(A).real)), 1e-12)
    if t_max is None:
        t_max = 2000.0 / rate
    G, t_relax = _relax(gamma_u, A, N_diff, sigma, channels, relax_tol, t_max)
    G = _newton_polish(G, A, N_diff, sigma, channels)
    info["relax_time"] = t_relax
    info["residual"] = _rel(riccati_rhs(G, A, N_diff, sigma, channels), 2.0 * N_diff)
    if check_uniqueness:
        G2, _ = _relax(10.0 * gamma_u, A, N_diff, sigma, channels, relax_tol, t_max)
        G2 = _newton_polish(G2, A, N_diff, sigma, channels)
        gap = float(np.max(np.abs(G2 - G)) / max(np.max(np.abs(G)), 1e-300))
        info["initial_condition_gap"] = gap
        if gap > 1e-8:
            logger.warning("Riccati stationary point depends on the initial condition (gap %.3g)", gap)
    low = heisenberg_min_eig(G, sigma)
    if low < HEISENBERG_FLOOR:
        raise InvalidCovariance(f"conditional covariance violates the uncertainty bound ({low:.3g})")
    return G, q_matrix(A, G, sigma, channels), info


def solve_moments(t: GaussianTransducer, *, ratio: float = COARSE_GRAIN_RATIO) -> MomentSolution:
    """Build drift/diffusion and both steady covariances for a transducer."""
    A = build_drift(t)
    N_diff = build_diffusion(t)
    sigma = t.sigma
    gamma_u = lyapunov_steady(A, N_diff)
    low = heisenberg_min_eig(gamma_u, sigma)
    if low < HEISENBERG_FLOOR:
        raise InvalidCovariance(f"unconditional covariance violates the uncertainty bound ({low:.3g})")
    channels = static_channels(t, A, ratio)
    gamma_c, Q, info = riccati_steady(A, N_diff, channels, sigma, gamma_u)
    return MomentSolution(A=A, N_diff=N_diff, gamma_u=gamma_u, gamma_c=gamma_c, Q=Q,
                          sigma=sigma, channels=channels,
                          initial_condition_gap=info["initial_condition_gap"],
                          riccati_info=info, source_channels=tuple(t.channels))


# -- plain-text matrix exchange ------------------------------------------------

def save_matrix_csv(path, M) -> None:
    """Write a matrix as row-major CSV with 17 significant digits.

    Complex matrices are written as ``re,im`` pairs per entry.
    """
    M = np.atleast_2d(np.asarray(M))
    with open(path, "w", newline="\n") as fh:
        for row in M:
            if np.iscomplexobj(M):
                cells = [f"{z.real:.17g},{z.imag:.17g}" for z in row]
            else:
                cells = [f"{x:.17g}" for x in row]
            fh.write(",".join(cells) + "\n")


def load_matrix_csv(path, complex_pairs: bool = False) -> NDArray:
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if complex_pairs:
        return data[:, 0::2] + 1j * data[:, 1::2]
    return data
