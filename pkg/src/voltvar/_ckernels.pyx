# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()


cdef void _flows(const long long[:] par, const long long[:] order, const double[:] r,
                 const double[:] x, const double[:] p, const double[:] q,
                 double[:] ell, double[:] P, double[:] Q) noexcept nogil:
    cdef Py_ssize_t a, i, k, j
    cdef Py_ssize_t n = order.shape[0]
    for a in range(n):
        k = order[a]
        i = k - 1
        P[i] = r[i] * ell[i] - p[i]
        Q[i] = x[i] * ell[i] - q[i]
    for a in range(n):
        k = order[a]
        j = par[k]
        if j != 0:
            P[j - 1] += P[k - 1]
            Q[j - 1] += Q[k - 1]


cdef bint _voltages(const long long[:] par, const long long[:] order, double v0,
                    const double[:] r, const double[:] x, const double[:] z2,
                    double[:] ell, double[:] P, double[:] Q, double[:] v) noexcept nogil:
    cdef Py_ssize_t a, i, k
    cdef Py_ssize_t n = order.shape[0]
    cdef double vp
    for a in range(n - 1, -1, -1):
        k = order[a]
        i = k - 1
        vp = v0 if par[k] == 0 else v[par[k] - 1]
        v[i] = vp + z2[i] * ell[i] - 2.0 * (r[i] * P[i] + x[i] * Q[i])
        if not v[i] > 0.0:
            return False
    return True


def sweep(parent, order, r, x, p, q, double v0, double tol, int max_iter):
    cdef const long long[:] par = np.ascontiguousarray(parent, dtype=np.int64)
    cdef const long long[:] ordv = np.ascontiguousarray(
        [k for k in order if k != 0], dtype=np.int64)
    cdef const double[:] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef const double[:] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[:] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t n = rv.shape[0]
    z2_arr = np.asarray(rv) ** 2 + np.asarray(xv) ** 2
    cdef const double[:] z2 = z2_arr
    P_arr = np.zeros(n)
    Q_arr = np.zeros(n)
    ell_arr = np.zeros(n)
    v_arr = np.zeros(n)
    cdef double[:] P = P_arr
    cdef double[:] Q = Q_arr
    cdef double[:] ell = ell_arr
    cdef double[:] v = v_arr
    cdef double change = INFINITY, d, new, vp
    cdef int it = 0
    cdef bint converged = False
    cdef Py_ssize_t a, i, k
    cdef Py_ssize_t m = ordv.shape[0]
    with nogil:
        while it < max_iter:
            it += 1
            _flows(par, ordv, rv, xv, pv, qv, ell, P, Q)
            if not _voltages(par, ordv, v0, rv, xv, z2, ell, P, Q, v):
                break
            change = 0.0
            for a in range(m):
                k = ordv[a]
                i = k - 1
                vp = v0 if par[k] == 0 else v[par[k] - 1]
                new = (P[i] * P[i] + Q[i] * Q[i]) / vp
                d = fabs(new - ell[i])
                if d > change or d != d:
                    change = d
                ell[i] = new
            if not change <= tol:
                if change != change or change == INFINITY:
                    break
                continue
            _flows(par, ordv, rv, xv, pv, qv, ell, P, Q)
            converged = _voltages(par, ordv, v0, rv, xv, z2, ell, P, Q, v)
            break
    return P_arr, Q_arr, ell_arr, v_arr, it, change, converged


def soft_threshold_box(y, eta_c, lo, hi):
    y_arr = np.ascontiguousarray(y, dtype=np.float64)
    shape = y_arr.shape
    cdef const double[:] yv = y_arr.ravel()
    cdef const double[:] ec = np.ascontiguousarray(
        np.broadcast_to(np.asarray(eta_c, dtype=np.float64), shape)).ravel()
    cdef const double[:] lov = np.ascontiguousarray(
        np.broadcast_to(np.asarray(lo, dtype=np.float64), shape)).ravel()
    cdef const double[:] hiv = np.ascontiguousarray(
        np.broadcast_to(np.asarray(hi, dtype=np.float64), shape)).ravel()
    out_arr = np.empty(yv.shape[0])
    cdef double[:] out = out_arr
    cdef Py_ssize_t i
    cdef double t, c
    with nogil:
        for i in range(yv.shape[0]):
            t = yv[i]
            c = ec[i]
            if t > hiv[i] + c:
                out[i] = hiv[i]
            elif t > c:
                out[i] = t - c
            elif t >= -c:
                out[i] = 0.0
            elif t >= lov[i] - c:
                out[i] = t + c
            else:
                out[i] = lov[i]
    return out_arr.reshape(shape)
