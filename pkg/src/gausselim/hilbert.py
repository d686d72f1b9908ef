"""Dense operators on truncated qubit/Fock tensor-product spaces.

Qubit convention: basis index 0 is the excited state |1> (sigma_z = +1),
index 1 is the ground state |0>, so the Pauli matrices take their textbook
form and ``sigma_minus = |0><1|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

CArray = np.ndarray


class DimensionError(ValueError):
    pass


class NormalizationError(ValueError):
    pass


class InvalidUnraveling(ValueError):
    """A homodyne channel has no matching Lindblad term."""


# -- layouts -------------------------------------------------------------------

@dataclass(frozen=True)
class Qubit:
    @property
    def dim(self) -> int:
        return 2


@dataclass(frozen=True)
class FockMode:
    cutoff: int  # number of Fock levels kept: |0>, ..., |cutoff-1>

    def __post_init__(self):
        if self.cutoff < 1:
            raise DimensionError("Fock cutoff must be positive")

    @property
    def dim(self) -> int:
        return self.cutoff


@dataclass(frozen=True)
class SpaceLayout:
    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if self.dim < 2:
            raise DimensionError("total dimension must be at least 2")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.dim for f in self.factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cutoffs(self) -> tuple[int, ...]:
        return tuple(f.cutoff for f in self.factors if isinstance(f, FockMode))

    def embed(self, index: int, local: CArray) -> CArray:
        """Place ``local`` on factor ``index`` with identities elsewhere."""
        local = np.asarray(local)
        dims = self.dims
        if not 0 <= index < len(dims):
            raise DimensionError(f"factor index {index} out of range")
        if local.shape != (dims[index], dims[index]):
            raise DimensionError(
                f"operator of shape {local.shape} does not fit factor {index} of dim {dims[index]}")
        mats = [np.eye(d) for d in dims]
        mats[index] = local
        return reduce(np.kron, mats).astype(complex)

    def identity(self) -> CArray:
        return np.eye(self.dim, dtype=complex)

    def ptrace(self, rho: CArray, keep: Sequence[int]) -> CArray:
        """Partial trace keeping the factors listed in ``keep`` (in order)."""
        dims = self.dims
        n = len(dims)
        keep = list(keep)
        t = np.asarray(rho).reshape(dims + dims)
        drop = [i for i in range(n) if i not in keep]
        # trace out from the back so axis numbers stay valid
        for k, i in enumerate(sorted(drop, reverse=True)):
            cur = n - k
            t = np.trace(t, axis1=i, axis2=i + cur)
        dk = int(np.prod([dims[i] for i in keep])) if keep else 1
        return t.reshape(dk, dk)


@dataclass(frozen=True)
class DenseOperator:
    """Complex matrix tagged with the layout it acts on."""

    layout: SpaceLayout
    matrix: CArray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.layout.dim, self.layout.dim):
            raise DimensionError("matrix shape does not match layout")
        object.__setattr__(self, "matrix", m)

    def dag(self) -> "DenseOperator":
        return DenseOperator(self.layout, self.matrix.conj().T)

    def _other(self, other):
        if isinstance(other, DenseOperator):
            if other.layout != self.layout:
                raise DimensionError("layout mismatch")
            return other.matrix
        return other

    def __matmul__(self, other):
        return DenseOperator(self.layout, self.matrix @ self._other(other))

    def __add__(self, other):
        return DenseOperator(self.layout, self.matrix + self._other(other))

    def __sub__(self, other):
        return DenseOperator(self.layout, self.matrix - self._other(other))

    def __mul__(self, scalar):
        return DenseOperator(self.layout, self.matrix * scalar)

    __rmul__ = __mul__

    def expect(self, rho) -> complex:
        return complex(np.trace(self.matrix @ self._other(rho)))

    def validate_density(self, tol: float = 1e-10, eig_floor: float = -1e-8) -> None:
        m = self.matrix
        if abs(np.trace(m) - 1) > tol:
            raise NormalizationError(f"trace {np.trace(m)!r} differs from 1")
        if np.max(np.abs(m - m.conj().T)) > tol:
            raise ValueError("density operator is not Hermitian")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < eig_floor:
            raise ValueError("density operator has negative eigenvalues")


# -- elementary operators ------------------------------------------------------

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = SIGMA_PLUS.T.copy()
PAULIS = {"I": np.eye(2, dtype=complex), "X": SIGMA_X, "Y": SIGMA_Y, "Z": SIGMA_Z}


def qubit_ket(bit: int) -> CArray:
    """|1> (excited) is basis index 0, |0> (ground) is index 1."""
    if bit not in (0, 1):
        raise ValueError("qubit label must be 0 or 1")
    v = np.zeros(2, dtype=complex)
    v[1 - bit] = 1.0
    return v


def ket(*bits: int) -> CArray:
    return reduce(np.kron, [qubit_ket(b) for b in bits])


def projector(psi: CArray) -> CArray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def destroy(n: int) -> CArray:
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)


def create(n: int) -> CArray:
    return destroy(n).conj().T


def number(n: int) -> CArray:
    return np.diag(np.arange(n, dtype=float)).astype(complex)


def quadrature(n: int, phi: float = 0.0) -> CArray:
    """``r_phi = (a e^{i phi} + a^dag e^{-i phi}) / sqrt(2)``; phi=0 gives q, -pi/2 gives p."""
    a = destroy(n)
    return (a * np.exp(1j * phi) + a.conj().T * np.exp(-1j * phi)) / np.sqrt(2)


def position(n: int) -> CArray:
    return quadrature(n, 0.0)


def momentum(n: int) -> CArray:
    a = destroy(n)
    return 1j * (a.conj().T - a) / np.sqrt(2)


def thermal_state(n: int, nbar: float) -> CArray:
    if nbar == 0:
        p = np.zeros(n)
        p[0] = 1.0
    else:
        k = np.arange(n)
        p = (nbar / (nbar + 1.0)) ** k / (nbar + 1.0)
        p /= p.sum()
    return np.diag(p).astype(complex)


def default_cutoff(nbar: float) -> int:
    return int(max(20, np.ceil(8.0 * (nbar + 1.0))))


def dag(x: CArray) -> CArray:
    return np.conj(x).T


# -- superoperators ------------------------------------------------------------

def commutator(a: CArray, b: CArray) -> CArray:
    return a @ b - b @ a


def anticommutator(a: CArray, b: CArray) -> CArray:
    return a @ b + b @ a


def dissipator(j: CArray, rho: CArray) -> CArray:
    """``D[j] rho = j rho j^dag - (j^dag j rho + rho j^dag j) / 2``."""
    jd = dag(j)
    jdj = jd @ j
    return j @ rho @ jd - 0.5 * (jdj @ rho + rho @ jdj)


def meas_superop(lam: CArray, rho: CArray, tol: float = 1e-10) -> CArray:
    """``H[lam] rho = (lam - <lam>) rho + rho (lam^dag - <lam^dag>)``."""
    tr = np.trace(rho)
    if abs(tr - 1.0) > tol:
        raise NormalizationError(f"density operator has trace {tr!r}")
    ex = np.trace(lam @ rho)
    return (lam - ex * np.eye(lam.shape[0])) @ rho + rho @ (dag(lam) - np.conj(ex) * np.eye(lam.shape[0]))


def vec_operator_containment(jumps: Sequence[CArray], lam: CArray) -> float:
    """Norm of the minimal coefficient vector writing ``lam`` as a jump combination.

    ``sum_i D[j_i]`` contains ``D[lam]`` iff ``lam = sum_i alpha_i j_i`` with
    ``|alpha| <= 1``. Returns ``inf`` when ``lam`` is outside the span.
    """
    if not jumps:
        return np.inf if np.any(lam) else 0.0
    J = np.stack([np.asarray(j).ravel() for j in jumps], axis=1)
    ell = np.asarray(lam).ravel()
    alpha, *_ = np.linalg.lstsq(J, ell, rcond=1e-12)
    resid = np.linalg.norm(J @ alpha - ell)
    if resid > 1e-9 * max(1.0, np.linalg.norm(ell)):
        return np.inf
    return float(np.linalg.norm(alpha))


@dataclass(frozen=True)
class SMEGenerator:
    """Generator of ``drho = (-i[H,rho] + sum D[j]rho) dt + sum H[lam]rho dW``.

    ``currents`` are ``dI_m = <lam_m + lam_m^dag> dt + dW_m``.
    """

    H: CArray
    jumps: tuple
    meas: tuple
    layout: SpaceLayout | None = None

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.meas)

    def deterministic(self, rho: CArray) -> CArray:
        out = -1j * commutator(self.H, rho)
        for j in self.jumps:
            out = out + dissipator(j, rho)
        return out

    def stochastic(self, rho: CArray) -> list[CArray]:
        return [meas_superop(lam, rho) for lam in self.meas]

    def current_drift(self, rho: CArray) -> np.ndarray:
        return np.array([2.0 * np.real(np.trace(lam @ rho)) for lam in self.meas])

    def superoperator(self) -> CArray:
        """Row-major vectorized deterministic generator (``d^2 x d^2``)."""
        d = self.dim
        eye = np.eye(d)
        K = -1j * self.H - 0.5 * sum((dag(j) @ j for j in self.jumps), np.zeros((d, d), complex))
        # row-major: vec(A X B) = (A kron B^T) vec X
        L = np.kron(K, eye) + np.kron(eye, K.conj())
        for j in self.jumps:
            L = L + np.kron(j, j.conj())
        return L

    def sparse_superoperator(self) -> sp.csr_matrix:
        d = self.dim
        eye = sp.identity(d, format="csr", dtype=complex)
        Hs = sp.csr_matrix(self.H)
        K = -1j * Hs
        for j in self.jumps:
            js = sp.csr_matrix(j)
            K = K - 0.5 * (js.conj().T @ js)
        L = sp.kron(K, eye) + sp.kron(eye, K.conj())
        for j in self.jumps:
            js = sp.csr_matrix(j)
            L = L + sp.kron(js, js.conj())
        return sp.csr_matrix(L)


def full_generator(H: CArray, jumps: Sequence[CArray], meas: Sequence[CArray],
                   layout: SpaceLayout | None = None, check: bool = True,
                   tol: float = 1e-8) -> SMEGenerator:
    """Bundle a full (un-eliminated) SME after checking every channel's backing."""
    H = np.asarray(H, dtype=complex)
    jumps = tuple(np.asarray(j, dtype=complex) for j in jumps)
    meas = tuple(np.asarray(m, dtype=complex) for m in meas)
    for op in (*jumps, *meas):
        if op.shape != H.shape:
            raise DimensionError("operators must share one layout")
    if check:
        for k, lam in enumerate(meas):
            norm = vec_operator_containment(jumps, lam)
            if norm > 1.0 + tol:
                raise InvalidUnraveling(
                    f"channel {k} lacks a matching Lindblad term (coefficient norm {norm:.6g})")
    return SMEGenerator(H=H, jumps=jumps, meas=meas, layout=layout)


def steady_state(gen: SMEGenerator) -> CArray:
    """Unconditional steady state via a sparse solve with a trace constraint."""
    d = gen.dim
    L = gen.sparse_superoperator().tolil()
    # replace the first equation by tr(rho) = 1
    row = np.zeros(d * d, dtype=complex)
    row[:: d + 1] = 1.0
    L[0, :] = row
    b = np.zeros(d * d, dtype=complex)
    b[0] = 1.0
    x = spla.spsolve(L.tocsc(), b)
    rho = x.reshape(d, d)
    rho = 0.5 * (rho + dag(rho))
    return rho / np.trace(rho).real


# -- operator bases ------------------------------------------------------------

def pauli_basis(n_qubits: int) -> tuple[list[str], list[CArray]]:
    """Orthonormal (Hilbert-Schmidt) Pauli-product basis, identity first."""
    labels = [""]
    for _ in range(n_qubits):
        labels = [lab + p for lab in labels for p in "IXYZ"]
    mats = [reduce(np.kron, [PAULIS[c] for c in lab]) / np.sqrt(2 ** n_qubits) for lab in labels]
    return labels, mats


def gell_mann_basis(d: int) -> tuple[list[str], list[CArray]]:
    """Orthonormal Hermitian basis of ``d x d`` matrices, identity first."""
    mats = [np.eye(d, dtype=complex) / np.sqrt(d)]
    labels = ["I"]
    for j in range(d):
        for k in range(j + 1, d):
            m = np.zeros((d, d), complex)
            m[j, k] = m[k, j] = 1 / np.sqrt(2)
            mats.append(m)
            labels.append(f"S{j}{k}")
            m = np.zeros((d, d), complex)
            m[j, k] = -1j / np.sqrt(2)
            m[k, j] = 1j / np.sqrt(2)
            mats.append(m)
            labels.append(f"A{j}{k}")
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1.0
        diag[l] = -l
        mats.append(np.diag(diag / np.sqrt(l * (l + 1))).astype(complex))
        labels.append(f"D{l}")
    return labels, mats


def hermitian_basis(d: int) -> tuple[list[str], list[CArray]]:
    n = int(round(np.log2(d)))
    if 2 ** n == d:
        return pauli_basis(n)
    return gell_mann_basis(d)


def expand(op: CArray, basis: Sequence[CArray]) -> np.ndarray:
    """Coefficients of ``op`` in an orthonormal operator basis."""
    return np.array([np.trace(dag(b) @ op) for b in basis])


def to_csv(path, op: CArray) -> None:
    from .moments import save_matrix_csv
    save_matrix_csv(path, np.asarray(op, dtype=complex))
