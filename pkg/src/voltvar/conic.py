"""Dense primal-dual interior-point solver for small second-order cone programs.

Problems are stated as::

    minimize    cost' z
    subject to  E z = e
                g_lo <= G z + offset <= g_hi          (rows may be one-sided)
                || F_i z + f_i ||_2 <= h_i' z + s_i   for every cone i

and internally mapped to the standard pair

    min c'x  s.t.  A x = b,  G x + s = h,  s in K
    max -b'y - h'w  s.t.  A'y + G'w + c = 0,  w in K

with ``K`` a nonnegative orthant times second-order cones.  The iteration is
a Mehrotra predictor-corrector on the homogeneous self-dual embedding with
Nesterov-Todd scaling, so infeasible instances end with a certificate
instead of diverging.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
STALLED = "stalled"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class ConicProblem:
    cost: np.ndarray
    E: np.ndarray | None = None
    e: np.ndarray | None = None
    G: np.ndarray | None = None
    g_lo: np.ndarray | None = None
    g_hi: np.ndarray | None = None
    offset: np.ndarray | None = None
    F: np.ndarray | None = None  # (n_cones, d, m)
    f: np.ndarray | None = None  # (n_cones, d)
    h: np.ndarray | None = None  # (n_cones, m)
    s: np.ndarray | None = None  # (n_cones,)

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=float)
        m = self.cost.size
        if self.E is None:
            self.E, self.e = np.zeros((0, m)), np.zeros(0)
        self.E = np.atleast_2d(np.asarray(self.E, dtype=float)).reshape(-1, m)
        self.e = np.asarray(self.e, dtype=float).reshape(-1)
        if self.G is None:
            self.G = np.zeros((0, m))
            self.g_lo = self.g_hi = np.zeros(0)
        self.G = np.asarray(self.G, dtype=float).reshape(-1, m)
        nb = self.G.shape[0]
        self.g_lo = np.broadcast_to(np.asarray(self.g_lo, dtype=float), (nb,)).copy()
        self.g_hi = np.broadcast_to(np.asarray(self.g_hi, dtype=float), (nb,)).copy()
        self.offset = (np.zeros(nb) if self.offset is None
                       else np.asarray(self.offset, dtype=float).reshape(nb))
        if self.F is None:
            self.F, self.f = np.zeros((0, 3, m)), np.zeros((0, 3))
            self.h, self.s = np.zeros((0, m)), np.zeros(0)
        self.F = np.asarray(self.F, dtype=float)
        nc = self.F.shape[0]
        self.f = np.asarray(self.f, dtype=float).reshape(nc, self.F.shape[1])
        self.h = np.asarray(self.h, dtype=float).reshape(nc, m)
        self.s = np.asarray(self.s, dtype=float).reshape(nc)
        if self.e.shape != (self.E.shape[0],):
            raise ValueError("E and e disagree in row count")
        if self.F.ndim != 3 or self.F.shape[2] != m or self.f.shape != self.F.shape[:2]:
            raise ValueError("cone blocks must be F: (n_cones, d, m), f: (n_cones, d)")
        if np.any(self.g_lo > self.g_hi):
            raise ValueError("box lower bound exceeds upper bound")

    @property
    def n_vars(self) -> int:
        return self.cost.size

    @property
    def n_cones(self) -> int:
        return self.F.shape[0]

    def cone_values(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Numerators ``F_i z + f_i`` and right-hand sides ``h_i' z + s_i``."""
        return self.F @ z + self.f, self.h @ z + self.s


@dataclass
class DualSolution:
    lam: np.ndarray
    u: np.ndarray
    mu: np.ndarray
    nu_lo: np.ndarray
    nu_hi: np.ndarray
    dual_value: float


@dataclass
class IPMResult:
    status: str
    z: np.ndarray
    dual: DualSolution
    primal_value: float
    dual_value: float
    gap: float
    pres: float
    dres: float
    iterations: int
    history: list = field(default_factory=list)
    certificate: dict | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


# -- cone algebra --------------------------------------------------------------

class _Cone:
    """Orthant of size ``nl`` followed by ``nq`` second-order cones of size ``dq``."""

    def __init__(self, nl: int, nq: int, dq: int):
        self.nl, self.nq, self.dq = nl, nq, dq
        self.size = nl + nq * dq
        self.degree = nl + nq

    def split(self, u):
        return u[: self.nl], u[self.nl:].reshape(self.nq, self.dq)

    def join(self, ul, uq):
        return np.concatenate((ul, uq.reshape(-1)))

    def identity(self):
        uq = np.zeros((self.nq, self.dq))
        uq[:, 0] = 1.0
        return self.join(np.ones(self.nl), uq)

    def max_violation(self, u) -> float:
        """Largest eigenvalue of ``-u``; negative iff ``u`` is interior."""
        ul, uq = self.split(u)
        vals = [-ul] if self.nl else []
        if self.nq:
            vals.append(np.linalg.norm(uq[:, 1:], axis=1) - uq[:, 0])
        return float(max((v.max() for v in vals if v.size), default=-1.0))

    def product(self, a, b):
        al, aq = self.split(a)
        bl, bq = self.split(b)
        pq = np.empty_like(aq)
        pq[:, 0] = np.einsum("ij,ij->i", aq, bq)
        pq[:, 1:] = aq[:, :1] * bq[:, 1:] + bq[:, :1] * aq[:, 1:]
        return self.join(al * bl, pq)

    def divide(self, lam, r):
        """Solve ``lam o x = r`` for ``x``."""
        ll, lq = self.split(lam)
        rl, rq = self.split(r)
        det = lq[:, 0] ** 2 - np.einsum("ij,ij->i", lq[:, 1:], lq[:, 1:])
        x0 = (lq[:, 0] * rq[:, 0] - np.einsum("ij,ij->i", lq[:, 1:], rq[:, 1:])) / det
        xq = np.empty_like(rq)
        xq[:, 0] = x0
        xq[:, 1:] = (rq[:, 1:] - x0[:, None] * lq[:, 1:]) / lq[:, :1]
        return self.join(rl / ll, xq)

    def max_step(self, u, du) -> float:
        """Largest ``alpha`` keeping ``u + alpha du`` in the cone (``u`` interior)."""
        ul, uq = self.split(u)
        dl, dq = self.split(du)
        alpha = math.inf
        neg = dl < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-ul[neg] / dl[neg])))
        if self.nq:
            a = dq[:, 0] ** 2 - np.einsum("ij,ij->i", dq[:, 1:], dq[:, 1:])
            b = uq[:, 0] * dq[:, 0] - np.einsum("ij,ij->i", uq[:, 1:], dq[:, 1:])
            c = np.maximum(uq[:, 0] ** 2 - np.einsum("ij,ij->i", uq[:, 1:], uq[:, 1:]), 0.0)
            disc = b * b - a * c
            hit = (disc >= 0) & ((a < 0) | (b < 0))
            if np.any(hit):
                root = c[hit] / (-b[hit] + np.sqrt(disc[hit]))
                alpha = min(alpha, float(root.min()))
        return alpha


def _jnorm(uq):
    """``sqrt(u0^2 - |u1|^2)`` per cone, factored to limit cancellation."""
    t = np.linalg.norm(uq[:, 1:], axis=1)
    return np.sqrt((uq[:, 0] - t) * (uq[:, 0] + t))


class _Scaling:
    """Nesterov-Todd scaling ``W`` with ``W w = W^{-1} s = lam``."""

    def __init__(self, cone: _Cone, s, w):
        self.cone = cone
        sl, sq = cone.split(s)
        wl, wq = cone.split(w)
        self.dl = np.sqrt(sl / wl)
        nq, dq = cone.nq, cone.dq
        if nq:
            sj = _jnorm(sq)
            wj = _jnorm(wq)
            sb = sq / sj[:, None]
            wb = wq / wj[:, None]
            gamma = np.sqrt((1.0 + np.einsum("ij,ij->i", sb, wb)) / 2.0)
            wbar = sb.copy()
            wbar[:, 0] += wb[:, 0]
            wbar[:, 1:] -= wb[:, 1:]
            wbar /= (2.0 * gamma)[:, None]
            beta = np.sqrt(sj / wj)
            v = wbar.copy()
            v[:, 0] += 1.0
            v /= np.sqrt(2.0 * (wbar[:, 0] + 1.0))[:, None]
            J = np.diag(np.r_[1.0, -np.ones(dq - 1)])
            vv = np.einsum("ij,ik->ijk", v, v)
            self.Wq = beta[:, None, None] * (2.0 * vv - J)
            Jv = v * np.diag(J)
            self.Wq_inv = (1.0 / beta)[:, None, None] * (
                2.0 * np.einsum("ij,ik->ijk", Jv, Jv) - J)
        else:
            self.Wq = self.Wq_inv = np.zeros((0, dq, dq))

    def apply(self, u, inverse=False):
        ul, uq = self.cone.split(u)
        if inverse:
            return self.cone.join(ul / self.dl, np.einsum("ijk,ik->ij", self.Wq_inv, uq))
        return self.cone.join(ul * self.dl, np.einsum("ijk,ik->ij", self.Wq, uq))

    def apply_rows(self, M, inverse=False):
        """``W M`` (or ``W^{-1} M``) for a matrix with cone-sized row count."""
        nl, nq, dq = self.cone.nl, self.cone.nq, self.cone.dq
        if inverse:
            top = M[:nl] / self.dl[:, None]
            Wq = self.Wq_inv
        else:
            top = M[:nl] * self.dl[:, None]
            Wq = self.Wq
        bot = np.einsum("ijk,ikm->ijm", Wq, M[nl:].reshape(nq, dq, M.shape[1])).reshape(nq * dq, M.shape[1])
        return np.vstack((top, bot))


# -- standard form ---------------------------------------------------------------

@dataclass
class _Standard:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    cone: _Cone
    n_eq_orig: int
    eq_box_rows: np.ndarray
    up_rows: np.ndarray
    lo_rows: np.ndarray


def _standardize(pb: ConicProblem) -> _Standard:
    lo, hi, off, G = pb.g_lo, pb.g_hi, pb.offset, pb.G
    fixed = np.isfinite(lo) & np.isfinite(hi) & (lo == hi)
    eq_rows = np.flatnonzero(fixed)
    up = np.flatnonzero(np.isfinite(hi) & ~fixed)
    dn = np.flatnonzero(np.isfinite(lo) & ~fixed)
    A = np.vstack((pb.E, G[eq_rows]))
    b = np.concatenate((pb.e, lo[eq_rows] - off[eq_rows]))
    nc, d = pb.f.shape if pb.n_cones else (0, pb.F.shape[1])
    Gq = -np.concatenate((pb.h[:, None, :], pb.F), axis=1).reshape(nc * (d + 1), pb.n_vars)
    hq = np.concatenate((pb.s[:, None], pb.f), axis=1).reshape(-1)
    Gs = np.vstack((G[up], -G[dn], Gq))
    hs = np.concatenate((hi[up] - off[up], off[dn] - lo[dn], hq))
    cone = _Cone(len(up) + len(dn), nc, d + 1)
    return _Standard(pb.cost, A, b, Gs, hs, cone, pb.E.shape[0], eq_rows, up, dn)


def _to_dual(pb: ConicProblem, st: _Standard, y, w) -> DualSolution:
    nb = pb.G.shape[0]
    nu_lo, nu_hi = np.zeros(nb), np.zeros(nb)
    k0 = st.n_eq_orig
    ye = y[k0:]
    nu_hi[st.eq_box_rows] = np.maximum(ye, 0.0)
    nu_lo[st.eq_box_rows] = np.maximum(-ye, 0.0)
    wl, wq = st.cone.split(w)
    nu, nd = len(st.up_rows), len(st.lo_rows)
    nu_hi[st.up_rows] = wl[:nu]
    nu_lo[st.lo_rows] = wl[nu:nu + nd]
    dual = DualSolution(lam=y[:k0].copy(), u=-wq[:, 1:].copy(), mu=wq[:, 0].copy(),
                        nu_lo=nu_lo, nu_hi=nu_hi, dual_value=0.0)
    dual.dual_value = dual_objective(pb, dual)
    return dual


def dual_objective(pb: ConicProblem, dual: DualSolution) -> float:
    """Lagrange dual function value at a dual-feasible point."""
    lo = np.where(np.isfinite(pb.g_lo), pb.g_lo, 0.0)
    hi = np.where(np.isfinite(pb.g_hi), pb.g_hi, 0.0)
    return float(
        -pb.e @ dual.lam
        + (pb.offset - hi) @ dual.nu_hi
        + (lo - pb.offset) @ dual.nu_lo
        + np.einsum("ij,ij->", dual.u, pb.f)
        - dual.mu @ pb.s
    )


# -- solver --------------------------------------------------------------------

def ipm_solve(problem: ConicProblem, tol: float = 1e-8, max_iter: int = 100,
              step: float = 0.99) -> IPMResult:
    """Solve ``problem``; see the module docstring for the formulation.

    The returned ``status`` is one of ``optimal``, ``primal_infeasible``,
    ``dual_infeasible``, ``stalled`` (``max_iter`` reached, last iterate
    returned) or ``numerical_failure``.
    """
    st = _standardize(problem)
    c, A, b, G, h, cone = st.c, st.A, st.b, st.G, st.h, st.cone
    # Small objectives are normalised so tolerances act relative to the cost.
    cn = np.linalg.norm(c)
    cscale = cn if 0.0 < cn < 1.0 else 1.0
    c = c / cscale
    m, k = c.size, b.size
    e_cone = cone.identity()
    history: list[dict] = []

    def kkt_factor(scaling):
        Gs = scaling.apply_rows(G, inverse=True)
        M = np.zeros((m + k, m + k))
        M[:m, :m] = Gs.T @ Gs
        M[:m, m:] = A.T
        M[m:, :m] = A
        return sla.lu_factor(M, check_finite=True), Gs

    def kkt_solve(fact, scaling, bx, by, bz):
        """Solve A'dy + G'dw = bx, A dx = by, G dx - W^2 dw = bz."""
        lu, Gs = fact
        wbz = scaling.apply(bz, inverse=True)
        rhs = np.concatenate((bx + Gs.T @ wbz, by))
        sol = sla.lu_solve(lu, rhs)
        dx, dy = sol[:m], sol[m:]
        # One step of iterative refinement on the reduced system.
        wdw = Gs @ dx - wbz
        r1 = bx - (A.T @ dy + Gs.T @ wdw)
        r2 = by - A @ dx
        corr = sla.lu_solve(lu, np.concatenate((r1, r2)))
        dx = dx + corr[:m]
        dy = dy + corr[m:]
        wdw = Gs @ dx - wbz
        return dx, dy, scaling.apply(wdw, inverse=True)

    bnorm = max(1.0, np.linalg.norm(b), np.linalg.norm(h))
    cnorm = max(1.0, np.linalg.norm(c))

    try:
        ident = _Scaling(cone, e_cone, e_cone)
        fact = kkt_factor(ident)
        x, _, dw = kkt_solve(fact, ident, np.zeros(m), b, h)
        s = -dw
        _, y, w = kkt_solve(fact, ident, -c, np.zeros(k), np.zeros(cone.size))
    except (np.linalg.LinAlgError, ValueError) as exc:
        return _failure(problem, st, NUMERICAL_FAILURE, 0, history, str(exc))
    ts = cone.max_violation(s)
    if ts >= -1e-8 * max(np.linalg.norm(s), 1.0):
        s = s + (1.0 + ts) * e_cone
    tz = cone.max_violation(w)
    if tz >= -1e-8 * max(np.linalg.norm(w), 1.0):
        w = w + (1.0 + tz) * e_cone
    tau = kappa = 1.0

    status = STALLED
    it = 0
    pres = dres = gap = math.inf
    certificate = None
    for it in range(max_iter + 1):
        rx = A.T @ y + G.T @ w + c * tau
        ry = -A @ x + b * tau
        rz = s + G @ x - h * tau
        rt = kappa + c @ x + b @ y + h @ w
        mu = (s @ w + tau * kappa) / (cone.degree + 1)

        pcost = c @ x / tau
        dcost = -(b @ y + h @ w) / tau
        gap = s @ w / tau**2
        pres = max(np.linalg.norm(G @ x + s - h * tau), np.linalg.norm(A @ x - b * tau)) / tau / bnorm
        dres = np.linalg.norm(rx) / tau / cnorm
        # Weak duality holds exactly for the problems perturbed by the residuals.
        defect = abs(x @ rx) + abs(w @ rz) + abs(y @ ry)
        history.append(dict(iteration=it, pcost=pcost * cscale, dcost=dcost * cscale,
                            gap=gap * cscale, pres=pres, dres=dres * cscale, tau=tau,
                            kappa=kappa, duality_defect=defect * cscale / tau**2))

        if pres <= tol and dres <= tol and gap <= tol and abs(pcost - dcost) <= tol:
            status = OPTIMAL
            break
        hy = -(b @ y + h @ w)
        if hy > 0 and np.linalg.norm(A.T @ y + G.T @ w) / hy <= tol * cnorm:
            status = PRIMAL_INFEASIBLE
            certificate = {"y": y / hy, "w": w / hy}
            break
        cx = -(c @ x)
        if cx > 0 and max(np.linalg.norm(A @ x), np.linalg.norm(G @ x + s)) / cx <= tol * bnorm:
            status = DUAL_INFEASIBLE
            certificate = {"x": x / cx, "s": s / cx}
            break
        if it == max_iter:
            break

        try:
            scaling = _Scaling(cone, s, w)
            lam = scaling.apply(w)
            fact = kkt_factor(scaling)
            d1 = kkt_solve(fact, scaling, -c, b, h)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            return _failure(problem, st, NUMERICAL_FAILURE, it, history, str(exc),
                            x / tau, y / tau * cscale, w / tau * cscale)
        lamsq = cone.product(lam, lam)
        c1 = c @ d1[0] + b @ d1[1] + h @ d1[2]

        def direction(eta, sigma_mu, corr_s, corr_t):
            r_lam = cone.divide(lam, sigma_mu * e_cone - lamsq - corr_s)
            bz = -eta * rz - scaling.apply(r_lam)
            d2 = kkt_solve(fact, scaling, -eta * rx, eta * ry, bz)
            comp_t = sigma_mu - tau * kappa - corr_t
            num = -eta * rt - comp_t / tau - (c @ d2[0] + b @ d2[1] + h @ d2[2])
            dtau = num / (c1 - kappa / tau)
            dx = d2[0] + dtau * d1[0]
            dy = d2[1] + dtau * d1[1]
            dw = d2[2] + dtau * d1[2]
            ds = -eta * rz - G @ dx + h * dtau
            dkappa = (comp_t - kappa * dtau) / tau
            return dx, dy, dw, ds, dtau, dkappa

        def max_alpha(dw, ds, dtau, dkappa):
            a = min(cone.max_step(lam, scaling.apply(ds, inverse=True)),
                    cone.max_step(lam, scaling.apply(dw)))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        with np.errstate(all="raise"):
            try:
                aff = direction(1.0, 0.0, np.zeros(cone.size), 0.0)
                a_aff = min(1.0, max_alpha(aff[2], aff[3], aff[4], aff[5]))
                sigma = (1.0 - a_aff) ** 3
                corr_s = cone.product(scaling.apply(aff[3], inverse=True), scaling.apply(aff[2]))
                corr_t = aff[4] * aff[5]
                dx, dy, dw, ds, dtau, dkappa = direction(1.0 - sigma, sigma * mu, corr_s, corr_t)
                alpha = min(1.0, step * max_alpha(dw, ds, dtau, dkappa))
            except FloatingPointError as exc:
                return _failure(problem, st, NUMERICAL_FAILURE, it, history, str(exc),
                                x / tau, y / tau * cscale, w / tau * cscale)
        if not np.isfinite(alpha) or alpha <= 0:
            return _failure(problem, st, NUMERICAL_FAILURE, it, history, "zero step",
                            x / tau, y / tau * cscale, w / tau * cscale)
        x = x + alpha * dx
        y = y + alpha * dy
        w = w + alpha * dw
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

    xs, ys, ws = x / tau, y / tau * cscale, w / tau * cscale
    dual = _to_dual(problem, st, ys, ws)
    return IPMResult(status=status, z=xs, dual=dual, primal_value=float(st.c @ xs),
                     dual_value=dual.dual_value, gap=float(gap * cscale), pres=float(pres),
                     dres=float(dres * cscale), iterations=it, history=history,
                     certificate=certificate)


def _failure(problem, st, status, it, history, msg, x=None, y=None, w=None):
    m, k = st.c.size, st.b.size
    x = np.zeros(m) if x is None else x
    y = np.zeros(k) if y is None else y
    w = np.zeros(st.cone.size) if w is None else w
    dual = _to_dual(problem, st, y, w)
    return IPMResult(status=status, z=x, dual=dual, primal_value=float(st.c @ x),
                     dual_value=dual.dual_value, gap=math.nan, pres=math.nan,
                     dres=math.nan, iterations=it, history=history,
                     certificate={"message": msg})


@dataclass(frozen=True)
class IPMSolver:
    """Default solver backend: holds tolerances, one call per solve."""

    tol: float = 1e-8
    max_iter: int = 100

    def solve(self, problem: ConicProblem) -> IPMResult:
        return ipm_solve(problem, tol=self.tol, max_iter=self.max_iter)


@dataclass(frozen=True)
class DualReport:
    stationarity: float
    cone_violation: float
    sign_violation: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.cone_violation, self.sign_violation,
                   self.complementarity)


def dual_residuals(problem: ConicProblem, z, dual: DualSolution) -> DualReport:
    """Stationarity, dual-cone membership, multiplier signs and complementary slackness."""
    pb = problem
    z = np.asarray(z, dtype=float)
    station = (pb.cost + pb.E.T @ dual.lam + pb.G.T @ (dual.nu_hi - dual.nu_lo)
               + np.einsum("ijk,ij->k", pb.F, dual.u) - pb.h.T @ dual.mu)
    cone_viol = 0.0
    if pb.n_cones:
        cone_viol = float(max(0.0, np.max(np.linalg.norm(dual.u, axis=1) - dual.mu)))
    sign = float(max(0.0, -min(dual.nu_lo.min(initial=0.0), dual.nu_hi.min(initial=0.0))))
    gz = pb.G @ z + pb.offset
    with np.errstate(invalid="ignore"):
        up = np.where(np.isfinite(pb.g_hi), dual.nu_hi * (pb.g_hi - gz), 0.0)
        dn = np.where(np.isfinite(pb.g_lo), dual.nu_lo * (gz - pb.g_lo), 0.0)
    comp = [np.abs(up).max(initial=0.0), np.abs(dn).max(initial=0.0)]
    if pb.n_cones:
        num, rhs = pb.cone_values(z)
        comp.append(np.abs(dual.mu * rhs - np.einsum("ij,ij->i", dual.u, num)).max())
    return DualReport(
        stationarity=float(np.abs(station).max(initial=0.0)),
        cone_violation=cone_viol,
        sign_violation=sign,
        complementarity=float(max(comp)),
    )
