"""Effective system-only SME after adiabatic elimination of a Gaussian transducer.

Two coupling regimes are supported:

* static: ``H_int = s^T r`` with Hermitian system operators ``s_i``;
* oscillating: ``H_int = (s_+ e^{i w t} + s_- e^{-i w t})^T r`` with
  ``(s_+)_i = (s_-)_i^dag`` and detuned homodyne channels ``Delta_m = +-w``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .hilbert import SMEGenerator, anticommutator, commutator, dag, expand, hermitian_basis
from .moments import MomentSolution

CLIP_WINDOW = 1e-8
PSD_FLOOR_P = -1e-10


class EliminationError(Exception):
    pass


class SingularMatrix(EliminationError):
    def __init__(self, name: str, cond: float):
        self.name = name
        self.cond = cond
        super().__init__(f"matrix {name} is singular (condition number {cond:.3g})")


class NegativeDecay(EliminationError):
    pass


class UnsupportedDetuning(EliminationError):
    pass


@dataclass(frozen=True)
class SystemCoupling:
    """System side of the interaction; build with :meth:`static` or :meth:`oscillating`."""

    mode: str
    s: tuple = ()
    s_plus: tuple = ()
    s_minus: tuple = ()
    omega: float = 0.0

    @classmethod
    def static(cls, s: Sequence[np.ndarray], tol: float = 1e-12) -> "SystemCoupling":
        ops = tuple(np.asarray(x, dtype=complex) for x in s)
        for k, x in enumerate(ops):
            if np.max(np.abs(x - dag(x)), initial=0.0) > tol:
                raise ValueError(f"static coupling operator s[{k}] is not Hermitian")
        return cls(mode="static", s=ops)

    @classmethod
    def oscillating(cls, s_plus: Sequence[np.ndarray], s_minus: Sequence[np.ndarray],
                    omega: float, tol: float = 1e-12) -> "SystemCoupling":
        sp_ = tuple(np.asarray(x, dtype=complex) for x in s_plus)
        sm_ = tuple(np.asarray(x, dtype=complex) for x in s_minus)
        if len(sp_) != len(sm_):
            raise ValueError("s_plus and s_minus must have equal length")
        for k, (a, b) in enumerate(zip(sp_, sm_)):
            if np.max(np.abs(a - dag(b)), initial=0.0) > tol:
                raise ValueError(f"s_plus[{k}] is not the adjoint of s_minus[{k}]")
        return cls(mode="oscillating", s_plus=sp_, s_minus=sm_, omega=float(omega))

    @property
    def dim(self) -> int:
        ops = self.s or self.s_plus
        return ops[0].shape[0]

    @property
    def length(self) -> int:
        return len(self.s or self.s_plus)


@dataclass(frozen=True)
class Certificate:
    min_eig_P: float
    min_eig_Pprime: float
    scale: float
    passed: bool

    def as_dict(self) -> dict:
        return {"min_eig_P": self.min_eig_P, "min_eig_Pprime": self.min_eig_Pprime,
                "scale": self.scale, "pass": self.passed}


@dataclass(frozen=True)
class EffectiveSME:
    """Reduced generator ``-i[H,.] + sum_i w_i D[L_i] + sum_m H[M_m] dW_m``.

    ``decay_matrix`` is expressed in ``coords`` (the ``s`` components in the
    static case, a traceless Hermitian operator basis in the oscillating
    case); jump and measurement operators are ``v^T coords``.
    """

    kind: str
    hamiltonian: np.ndarray
    decay_matrix: np.ndarray
    coords: tuple
    coord_labels: tuple
    jump_ops: tuple
    meas_ops: tuple
    meas_vectors: tuple
    lambdas: tuple
    certificate: Certificate
    operator_certificate: Certificate
    double_commutator: Callable = field(repr=False, compare=False, default=None)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    def deterministic(self, rho: np.ndarray) -> np.ndarray:
        out = -1j * commutator(self.hamiltonian, rho)
        for w, L in self.jump_ops:
            Ld = dag(L)
            out = out + w * (L @ rho @ Ld - 0.5 * anticommutator(Ld @ L, rho))
        return out

    def generator(self) -> SMEGenerator:
        jumps = tuple(np.sqrt(w) * L for w, L in self.jump_ops if w > 0)
        return SMEGenerator(H=self.hamiltonian, jumps=jumps, meas=tuple(self.meas_ops))


# -- helpers -------------------------------------------------------------------

def _inv(M: np.ndarray, name: str, cond_max: float = 1e12) -> np.ndarray:
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > cond_max:
        raise SingularMatrix(name, cond)
    return np.linalg.inv(M)


def _combine(vec: np.ndarray, ops: Sequence[np.ndarray]) -> np.ndarray:
    out = np.zeros_like(ops[0], dtype=complex)
    for v, op in zip(vec, ops):
        if v != 0:
            out = out + v * op
    return out


def lindblad_decompose(P: np.ndarray, clip: float = CLIP_WINDOW) -> list[tuple[float, np.ndarray]]:
    """Eigen-decomposition ``P = sum_i w_i v_i v_i^dag`` with clipping of tiny negatives."""
    P = np.asarray(P, dtype=complex)
    scale = np.linalg.norm(P, 2) if P.size else 0.0
    if np.max(np.abs(P - dag(P)), initial=0.0) > 1e-10 * max(scale, 1.0):
        raise ValueError("decay matrix is not Hermitian")
    w, V = np.linalg.eigh(0.5 * (P + dag(P)))
    if w.size and w.min() < -clip * scale:
        raise NegativeDecay(f"decay matrix has eigenvalue {w.min():.3g} (scale {scale:.3g})")
    w = np.where(w < 0, 0.0, w)
    return [(float(w[i]), V[:, i]) for i in range(w.size)]


def certify_positivity(P: np.ndarray, lambdas: Sequence[np.ndarray],
                       floor: float = CLIP_WINDOW) -> Certificate:
    """Check ``P >= 0`` and ``P - sum_m Lambda_m Lambda_m^dag >= 0``."""
    P = np.asarray(P, dtype=complex)
    Pp = P.copy()
    for lam in lambdas:
        lam = np.asarray(lam, dtype=complex)
        Pp = Pp - np.outer(lam, lam.conj())
    scale = float(np.linalg.norm(P, 2)) if P.size else 0.0
    e1 = float(np.linalg.eigvalsh(0.5 * (P + dag(P))).min()) if P.size else 0.0
    e2 = float(np.linalg.eigvalsh(0.5 * (Pp + dag(Pp))).min()) if P.size else 0.0
    tol = floor * scale
    return Certificate(e1, e2, scale, bool(e1 >= -tol and e2 >= -tol))


def superoperator_of(fn: Callable[[np.ndarray], np.ndarray], d: int) -> np.ndarray:
    """Row-major matrix of a linear map on ``d x d`` operators."""
    S = np.zeros((d * d, d * d), dtype=complex)
    for k in range(d * d):
        E = np.zeros(d * d, dtype=complex)
        E[k] = 1.0
        S[:, k] = fn(E.reshape(d, d)).ravel()
    return S


def lindblad_from_superoperator(S: np.ndarray, basis: Sequence[np.ndarray]):
    """Split a generator into ``(H, K)`` in an orthonormal Hermitian basis.

    ``basis[0]`` must be ``I/sqrt(d)``. ``K`` is the coefficient matrix of
    ``F_a rho F_b`` over the traceless elements ``basis[1:]``.
    """
    d = basis[0].shape[0]
    # S[(i,k),(j,l)] -> T[(i,j),(k,l)] = sum_ab c_ab vec(F_a) vec(F_b)^dag
    T = S.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)
    B = np.stack([b.ravel() for b in basis], axis=1)
    c = dag(B) @ T @ B
    c = 0.5 * (c + dag(c))
    F = sum((c[a, 0] / np.sqrt(d)) * basis[a] for a in range(1, len(basis)))
    H = 0.5j * (F - dag(F))
    return 0.5 * (H + dag(H)), c[1:, 1:]


# -- static coupling -----------------------------------------------------------

def _static_parts(m: MomentSolution):
    A, Gu, sg = m.A, m.gamma_u, m.sigma
    Ainv = _inv(A, "A")
    Hmat = Ainv @ (Gu + 1j * sg) - (Gu - 1j * sg.T) @ Ainv.T
    P = -0.5 * (Ainv @ (Gu - 1j * sg) + (Gu + 1j * sg.T) @ Ainv.T)
    return Ainv, Hmat, P


def double_commutator_static(m: MomentSolution, s: Sequence[np.ndarray]):
    """Deterministic part written with nested (anti)commutators."""
    Ainv = _inv(m.A, "A")
    Cg = Ainv @ m.gamma_u
    Cs = Ainv @ m.sigma
    n = len(s)

    def apply(rho):
        out = np.zeros_like(rho, dtype=complex)
        for k in range(n):
            ck = commutator(s[k], rho)
            ak = anticommutator(s[k], rho)
            for i in range(n):
                if Cg[i, k] != 0:
                    out += 0.5 * Cg[i, k] * commutator(s[i], ck)
                if Cs[i, k] != 0:
                    out += 0.5j * Cs[i, k] * commutator(s[i], ak)
        return out

    return apply


def static_lambdas(m: MomentSolution) -> list[np.ndarray]:
    Ainv = _inv(m.A, "A")
    QinvT = _inv(m.Q, "Q").T
    out = []
    for ch in m.channels:
        out.append((m.gamma_c - 1j * m.sigma) @ QinvT @ ch.c + Ainv @ (m.gamma_c @ ch.c - m.sigma @ ch.m))
    return out


def effective_static(m: MomentSolution, coupling: SystemCoupling) -> EffectiveSME:
    """Effective SME for a time-independent coupling ``H_int = s^T r``."""
    if coupling.mode != "static":
        raise ValueError("effective_static needs a static coupling")
    if coupling.length != m.A.shape[0]:
        raise ValueError("coupling vector length does not match the transducer")
    for ch in (*m.source_channels, *m.channels):
        if ch.detuning != 0.0:
            raise UnsupportedDetuning("static coupling requires undetuned channels")
    s = coupling.s
    d = coupling.dim
    _, Hmat, P = _static_parts(m)
    H = np.zeros((d, d), dtype=complex)
    for i in range(len(s)):
        for j in range(len(s)):
            if Hmat[i, j] != 0:
                H += Hmat[i, j] * (s[i] @ s[j])
    H = 0.25j * H
    H = 0.5 * (H + dag(H))
    P = 0.5 * (P + dag(P))
    lambdas = static_lambdas(m)
    meas_vectors = tuple(1j * lam for lam in lambdas)
    meas_ops = tuple(_combine(v, s) for v in meas_vectors)
    cert = certify_positivity(P, lambdas)
    if cert.min_eig_P < -CLIP_WINDOW * max(cert.scale, 1e-300):
        raise NegativeDecay(f"decay matrix has eigenvalue {cert.min_eig_P:.3g}")
    jumps = tuple((w, _combine(v, s)) for w, v in lindblad_decompose(P) if w > CLIP_WINDOW * cert.scale)
    dc = double_commutator_static(m, s)
    op_cert = _operator_certificate(superoperator_of(dc, d), meas_ops, d)
    return EffectiveSME(kind="static", hamiltonian=H, decay_matrix=P, coords=tuple(s),
                        coord_labels=tuple(f"s{i}" for i in range(len(s))),
                        jump_ops=jumps, meas_ops=meas_ops, meas_vectors=meas_vectors,
                        lambdas=tuple(lambdas), certificate=cert, operator_certificate=op_cert,
                        double_commutator=dc)


def _operator_certificate(S: np.ndarray, meas_ops, d: int) -> Certificate:
    _, basis = hermitian_basis(d)
    _, K = lindblad_from_superoperator(S, basis)
    ells = [expand(M, basis[1:]) for M in meas_ops]
    return certify_positivity(K, ells)


# -- oscillating coupling ------------------------------------------------------

def double_commutator_oscillating(m: MomentSolution, coupling: SystemCoupling):
    w = coupling.omega
    n = m.A.shape[0]
    eye = np.eye(n)
    Cp = _inv(m.A + 1j * w * eye, "A+iw")
    Cm = _inv(m.A - 1j * w * eye, "A-iw")
    Gp, Sp = Cp @ m.gamma_u, Cp @ m.sigma
    Gm, Sm = Cm @ m.gamma_u, Cm @ m.sigma
    sp_, sm_ = coupling.s_plus, coupling.s_minus

    def block(G, S, first, second, rho):
        out = np.zeros_like(rho, dtype=complex)
        for k in range(n):
            ck = commutator(second[k], rho)
            ak = anticommutator(second[k], rho)
            for i in range(n):
                if G[i, k] != 0:
                    out += 0.5 * G[i, k] * commutator(first[i], ck)
                if S[i, k] != 0:
                    out += 0.5j * S[i, k] * commutator(first[i], ak)
        return out

    def apply(rho):
        return block(Gp, Sp, sp_, sm_, rho) + block(Gm, Sm, sm_, sp_, rho)

    return apply


def oscillating_lambdas(m: MomentSolution, source_channels, omega: float):
    """``(Theta_m, Xi_m, Delta_m)`` for each detuned source channel."""
    n = m.A.shape[0]
    eye = np.eye(n)
    Gc, sg = m.gamma_c, m.sigma
    out = []
    for ch in source_channels:
        D = ch.detuning
        if not (np.isclose(D, omega) or np.isclose(D, -omega)) or D == 0.0:
            raise UnsupportedDetuning(f"detuning {D:g} is not +-omega (omega={omega:g})")
        theta = ((Gc - 1j * sg) @ _inv(m.Q + 1j * D * eye, "Q+iD").T @ ch.c_plus
                 + _inv(m.A - 1j * D * eye, "A-iD") @ (Gc @ ch.c_plus - sg @ ch.m_plus))
        xi = ((Gc - 1j * sg) @ _inv(m.Q - 1j * D * eye, "Q-iD").T @ ch.c_minus
              + _inv(m.A + 1j * D * eye, "A+iD") @ (Gc @ ch.c_minus - sg @ ch.m_minus))
        out.append((theta, xi, D))
    return out


def effective_oscillating(m: MomentSolution, coupling: SystemCoupling,
                          source_channels: Sequence | None = None) -> EffectiveSME:
    """Effective SME for ``s(t) = s_+ e^{iwt} + s_- e^{-iwt}`` with LO detunings ``+-w``.

    ``source_channels`` defaults to the detuned channels ``m`` was solved with.
    """
    if source_channels is None:
        source_channels = m.source_channels
    if coupling.mode != "oscillating":
        raise ValueError("effective_oscillating needs an oscillating coupling")
    if coupling.length != m.A.shape[0]:
        raise ValueError("coupling vector length does not match the transducer")
    d = coupling.dim
    w = coupling.omega
    dc = double_commutator_oscillating(m, coupling)
    S = superoperator_of(dc, d)
    labels, basis = hermitian_basis(d)
    H, K = lindblad_from_superoperator(S, basis)
    raw = oscillating_lambdas(m, source_channels, w)
    meas_ops = []
    for theta, xi, D in raw:
        if np.isclose(D, -w):
            op = 1j * _combine(theta, coupling.s_plus) + 1j * _combine(xi, coupling.s_minus)
        else:
            op = 1j * _combine(xi, coupling.s_plus) + 1j * _combine(theta, coupling.s_minus)
        meas_ops.append(op)
    coords = tuple(basis[1:])
    meas_vectors = tuple(expand(M, coords) for M in meas_ops)
    cert = certify_positivity(K, meas_vectors)
    if cert.min_eig_P < -CLIP_WINDOW * max(cert.scale, 1e-300):
        raise NegativeDecay(f"decay matrix has eigenvalue {cert.min_eig_P:.3g}")
    jumps = tuple((wi, _combine(v, coords)) for wi, v in lindblad_decompose(K) if wi > CLIP_WINDOW * cert.scale)
    return EffectiveSME(kind="oscillating", hamiltonian=H, decay_matrix=K, coords=coords,
                        coord_labels=tuple(labels[1:]), jump_ops=jumps, meas_ops=tuple(meas_ops),
                        meas_vectors=meas_vectors, lambdas=tuple((t, x) for t, x, _ in raw),
                        certificate=cert, operator_certificate=cert, double_commutator=dc)


def reduced_current_map(eff: EffectiveSME) -> list[Callable[[np.ndarray], float]]:
    """Per-channel current drift ``rho -> <M + M^dag>``."""
    def make(M):
        herm = M + dag(M)
        return lambda rho: float(np.real(np.trace(herm @ rho)))
    return [make(M) for M in eff.meas_ops]


# -- text report ---------------------------------------------------------------

def _pairs(v) -> str:
    return " ".join(f"({z.real:.12g},{z.imag:.12g})" for z in np.atleast_1d(v))


def format_report(eff: EffectiveSME, basis_labels=None) -> str:
    """Structured text summary of an effective SME in a named operator basis."""
    labels, basis = hermitian_basis(eff.dim) if basis_labels is None else basis_labels

    def op_line(name, op):
        coeffs = expand(op, basis)
        terms = [f"{lab}:({z.real:.12g},{z.imag:.12g})" for lab, z in zip(labels, coeffs)
                 if abs(z) > 1e-14]
        return f"{name} = " + (" ".join(terms) if terms else "0")

    lines = [f"[effective_sme]", f"kind = {eff.kind}", f"dim = {eff.dim}",
             "basis = orthonormal " + ("Pauli products" if labels and labels[0].startswith("I") else "Hermitian"),
             op_line("hamiltonian", eff.hamiltonian)]
    for k, (w, L) in enumerate(eff.jump_ops):
        lines.append(f"jump.{k}.rate = {w:.12g}")
        lines.append(op_line(f"jump.{k}.op", L))
    for k, M in enumerate(eff.meas_ops):
        lines.append(op_line(f"meas.{k}.op", M))
    for k, lam in enumerate(eff.lambdas):
        if isinstance(lam, tuple):
            lines.append(f"meas.{k}.theta = {_pairs(lam[0])}")
            lines.append(f"meas.{k}.xi = {_pairs(lam[1])}")
        else:
            lines.append(f"meas.{k}.lambda = {_pairs(lam)}")
    c = eff.certificate
    lines += ["[certificate]", f"min_eig_P = {c.min_eig_P:.12g}",
              f"min_eig_Pprime = {c.min_eig_Pprime:.12g}", f"pass = {str(c.passed).lower()}"]
    oc = eff.operator_certificate
    lines += [f"operator_min_eig_P = {oc.min_eig_P:.12g}",
              f"operator_min_eig_Pprime = {oc.min_eig_Pprime:.12g}",
              f"operator_pass = {str(oc.passed).lower()}"]
    return "\n".join(lines) + "\n"
