"""Pure-Python twin of the compiled trajectory loop (same arguments, same result)."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

DENSE_BELOW = 32


def _unstack(data, indices, indptr, d):
    ops = []
    for row in np.asarray(indptr):
        lo, hi = row[0], row[-1]
        m = sp.csr_matrix((data[lo:hi], indices[lo:hi], row - lo), shape=(d, d))
        ops.append(m.toarray() if d < DENSE_BELOW else m)
    return ops


def integrate(data, indices, indptr, n_meas, n_jump, phase, rho, dt, inc, mode,
              stride, d_sys, out_inc, out_states, renorm_every, trace_tol):
    d = rho.shape[0]
    d_env = d // d_sys
    ops = _unstack(np.asarray(data), np.asarray(indices), np.asarray(indptr), d)
    K, meas, jumps = ops[0], ops[1:1 + n_meas], ops[1 + n_meas:]
    meas_t = [m.T for m in meas]
    phase = np.asarray(phase)
    state = np.array(rho, dtype=complex)

    def reduced(x):
        return np.einsum("aebe->ab", x.reshape(d_sys, d_env, d_sys, d_env))

    out_states[0] = reduced(state)
    r = 1
    for step in range(inc.shape[0]):
        ex = np.array([(mt.multiply(state) if sp.issparse(mt) else mt * state).sum() for mt in meas_t])
        drift = 2.0 * ex.real
        if mode == 0:
            dw = inc[step]
            out_inc[step] = drift * dt + dw
        else:
            dw = inc[step] - drift * dt
            out_inc[step] = dw
        B = dt * (K @ state)
        for m, lam in enumerate(meas):
            B = B + dw[m] * (lam @ state)
        B = B - np.dot(dw, ex) * state
        new = state + B + B.conj().T
        for j in jumps:
            Y = j @ state
            new = new + dt * (j @ Y.conj().T).conj().T
        new = phase * new
        state = 0.5 * (new + new.conj().T)
        tr = np.trace(state).real
        if not abs(tr - 1.0) <= trace_tol:
            rho[...] = state
            return step
        if (step + 1) % renorm_every == 0:
            state = state / tr
        if (step + 1) % stride == 0:
            out_states[r] = reduced(state)
            r += 1
    rho[...] = state
    return -1
