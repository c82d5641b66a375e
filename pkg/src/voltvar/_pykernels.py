"""Pure-Python reference kernels.

Loop-for-loop twins of ``_ckernels.pyx``; used when the extension is not
built or when ``VOLTVAR_PURE_PYTHON=1``.
"""
import math

import numpy as np


def sweep(parent, order, r, x, p, q, v0, tol, max_iter):
    """Backward/forward sweep for the branch flow equations.

    ``parent`` has one entry per bus (root included); ``order`` lists the
    non-root buses leaf-to-root.  Per-line arrays are indexed by ``bus - 1``.
    Returns ``(P, Q, ell, v, iterations, last_change, converged)``.
    """
    n = len(r)
    par = [int(k) for k in parent]
    order = [int(k) for k in order if k != 0]
    r = [float(a) for a in r]
    x = [float(a) for a in x]
    p = [float(a) for a in p]
    q = [float(a) for a in q]
    z2 = [r[i] * r[i] + x[i] * x[i] for i in range(n)]
    ell = [0.0] * n
    P = [0.0] * n
    Q = [0.0] * n
    v = [0.0] * n
    change = math.inf
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        _flows(par, order, r, x, p, q, ell, P, Q)
        ok = _voltages(par, order, v0, r, x, z2, ell, P, Q, v)
        if not ok:
            break
        change = 0.0
        for k in order:
            i = k - 1
            vp = v0 if par[k] == 0 else v[par[k] - 1]
            new = (P[i] * P[i] + Q[i] * Q[i]) / vp
            d = abs(new - ell[i])
            if d > change or d != d:
                change = d
            ell[i] = new
        if not change <= tol:
            if change != change or change == math.inf:
                break
            continue
        _flows(par, order, r, x, p, q, ell, P, Q)
        converged = _voltages(par, order, v0, r, x, z2, ell, P, Q, v)
        break
    return (np.array(P), np.array(Q), np.array(ell), np.array(v), it, change, converged)


def _flows(par, order, r, x, p, q, ell, P, Q):
    for k in order:
        i = k - 1
        P[i] = r[i] * ell[i] - p[i]
        Q[i] = x[i] * ell[i] - q[i]
    for k in order:
        j = par[k]
        if j != 0:
            P[j - 1] += P[k - 1]
            Q[j - 1] += Q[k - 1]


def _voltages(par, order, v0, r, x, z2, ell, P, Q, v):
    for k in reversed(order):
        i = k - 1
        vp = v0 if par[k] == 0 else v[par[k] - 1]
        v[i] = vp + z2[i] * ell[i] - 2.0 * (r[i] * P[i] + x[i] * Q[i])
        if not v[i] > 0.0:
            return False
    return True


def soft_threshold_box(y, eta_c, lo, hi):
    """Entrywise minimizer of ``0.5 (u - y)^2 + eta_c |u|`` over ``[lo, hi]``."""
    y = np.asarray(y, dtype=float)
    ec = np.broadcast_to(np.asarray(eta_c, dtype=float), y.shape)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), y.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), y.shape)
    out = np.empty_like(y)
    for i in range(y.size):
        out.flat[i] = _threshold1(y.flat[i], ec.flat[i], lo.flat[i], hi.flat[i])
    return out


def _threshold1(y, ec, lo, hi):
    if y > hi + ec:
        return hi
    if y > ec:
        return y - ec
    if y >= -ec:
        return 0.0
    if y >= lo - ec:
        return y + ec
    return lo
