# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Euler-Maruyama trajectory loop.

Operators arrive as stacked CSR blocks sharing one ``data``/``indices`` pool:
row ``k`` of ``indptr`` holds the ``d + 1`` offsets of operator ``k``.
Operator 0 is the non-Hermitian drift ``K``, operators ``1..n_meas`` are the
measurement operators and the remaining ``n_jump`` are Lindblad jumps.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

ctypedef double complex cplx


cdef inline void csr_mul_acc(const cplx* data, const int* indices, const int* ptr,
                             cplx coef, const cplx* X, cplx* out, int d) noexcept nogil:
    # out += coef * Op @ X   (row-major d x d buffers)
    cdef int i, p, k
    cdef cplx v
    cdef const cplx* xrow
    cdef cplx* orow
    for i in range(d):
        orow = out + i * d
        for p in range(ptr[i], ptr[i + 1]):
            v = coef * data[p]
            xrow = X + indices[p] * d
            for k in range(d):
                orow[k] = orow[k] + v * xrow[k]


cdef inline cplx csr_trace_prod(const cplx[::1] data, const int[::1] indices, const int[:, ::1] indptr,
                                int op, const cplx[:, ::1] X, int d) noexcept nogil:
    # tr(Op @ X)
    cdef int i, p
    cdef cplx acc = 0
    for i in range(d):
        for p in range(indptr[op, i], indptr[op, i + 1]):
            acc = acc + data[p] * X[indices[p], i]
    return acc


cdef inline void record_reduced(const cplx[:, ::1] rho, cplx[:, :, ::1] out, int r,
                                int d_sys, int d_env) noexcept nogil:
    cdef int a, b, e
    cdef cplx acc
    for a in range(d_sys):
        for b in range(d_sys):
            acc = 0
            for e in range(d_env):
                acc = acc + rho[a * d_env + e, b * d_env + e]
            out[r, a, b] = acc


def integrate(cplx[::1] data, int[::1] indices, int[:, ::1] indptr, int n_meas, int n_jump,
              cplx[:, ::1] phase, cplx[:, ::1] rho, double dt, double[:, ::1] inc, int mode,
              int stride, int d_sys, double[:, ::1] out_inc, cplx[:, :, ::1] out_states,
              int renorm_every, double trace_tol):
    """Integrate one trajectory in place; returns -1 or the index of a failing step.

    ``mode == 0``: ``inc`` holds Wiener increments and ``out_inc`` receives the
    currents. ``mode == 1``: ``inc`` holds currents and ``out_inc`` receives
    the innovations.
    """
    cdef int d = rho.shape[0]
    cdef int n_steps = inc.shape[0]
    cdef int d_env = d // d_sys
    cdef cplx[:, ::1] B = np.zeros((d, d), dtype=np.complex128)
    cdef cplx[:, ::1] Y = np.zeros((d, d), dtype=np.complex128)
    cdef cplx[:, ::1] Yd = np.zeros((d, d), dtype=np.complex128)
    cdef cplx[:, ::1] new = np.zeros((d, d), dtype=np.complex128)
    cdef cplx[::1] ex = np.zeros(max(n_meas, 1), dtype=np.complex128)
    cdef double[::1] dw = np.zeros(max(n_meas, 1), dtype=np.float64)
    cdef int step, m, i, k, j, r = 0, failed = -1
    cdef double drift, tr
    cdef cplx shift, z
    cdef cplx* pr = &rho[0, 0]
    cdef cplx* pB = &B[0, 0]
    cdef cplx* pY = &Y[0, 0]
    cdef cplx* pYd = &Yd[0, 0]
    cdef cplx* pN = &new[0, 0]

    with nogil:
        record_reduced(rho, out_states, 0, d_sys, d_env)
        r = 1
        for step in range(n_steps):
            for m in range(n_meas):
                ex[m] = csr_trace_prod(data, indices, indptr, 1 + m, rho, d)
                drift = 2.0 * ex[m].real
                if mode == 0:
                    dw[m] = inc[step, m]
                    out_inc[step, m] = drift * dt + dw[m]
                else:
                    dw[m] = inc[step, m] - drift * dt
                    out_inc[step, m] = dw[m]
            # B = (dt K + sum dW (lam - <lam>)) rho
            shift = 0
            for m in range(n_meas):
                shift = shift + dw[m] * ex[m]
            for i in range(d * d):
                pB[i] = -shift * pr[i]
            csr_mul_acc(&data[0], &indices[0], &indptr[0, 0], dt, pr, pB, d)
            for m in range(n_meas):
                csr_mul_acc(&data[0], &indices[0], &indptr[1 + m, 0], dw[m], pr, pB, d)
            for i in range(d):
                for k in range(d):
                    pN[i * d + k] = pr[i * d + k] + pB[i * d + k] + pB[k * d + i].conjugate()
            # jumps: dt * j rho j^dag = dt * j (j rho)^dag for Hermitian rho
            for j in range(n_jump):
                for i in range(d * d):
                    pY[i] = 0
                csr_mul_acc(&data[0], &indices[0], &indptr[1 + n_meas + j, 0], 1.0, pr, pY, d)
                for i in range(d):
                    for k in range(d):
                        pYd[i * d + k] = pY[k * d + i].conjugate()
                csr_mul_acc(&data[0], &indices[0], &indptr[1 + n_meas + j, 0], dt, pYd, pN, d)
            # exact rotation by the diagonal part of H, then Hermitize
            tr = 0.0
            for i in range(d):
                for k in range(i, d):
                    z = 0.5 * phase[i, k] * (pN[i * d + k] + pN[k * d + i].conjugate())
                    pr[i * d + k] = z
                    pr[k * d + i] = z.conjugate()
                tr = tr + pr[i * d + i].real
            if fabs(tr - 1.0) > trace_tol or tr != tr:
                failed = step
                break
            if (step + 1) % renorm_every == 0:
                for i in range(d * d):
                    pr[i] = pr[i] / tr
            if (step + 1) % stride == 0:
                record_reduced(rho, out_states, r, d_sys, d_env)
                r = r + 1
    return failed
