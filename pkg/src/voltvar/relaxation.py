"""SOCP relaxation of the branch flow model in the reduced variable ``z = [Q; ell]``.

Line flows, voltages and reactive injections are affine in ``z``::

    P = A_p z + b_p(p),    v = A_v z + b_v(p),    q = A_q z

and each relaxed current equation becomes the 3-dimensional cone
``|| A_n z + b_n(p) || <= c_n' z + d_n(p)``.  Note that ``b_v`` (and hence
``b_n``, ``d_n``) carries the active injections: voltages depend on ``P``,
which depends on ``p``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .branchflow import OperatingPoint
from .conic import (DUAL_INFEASIBLE, OPTIMAL, PRIMAL_INFEASIBLE, ConicProblem,
                    DualSolution, IPMResult, IPMSolver)
from .network import RadialNetwork


class InfeasibleError(RuntimeError):
    """No operating point satisfies the voltage limits for these injections."""

    def __init__(self, message: str, result: IPMResult | None = None):
        super().__init__(message)
        self.result = result


class SolverFailure(RuntimeError):
    def __init__(self, message: str, result: IPMResult | None = None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True, eq=False)
class AffineMaps:
    n: int
    v0: float
    A_p: np.ndarray
    A_v: np.ndarray
    A_q: np.ndarray
    subtree: np.ndarray  # subtree[i, j] = 1 iff bus j+1 lies below (or is) bus i+1
    up: np.ndarray       # parent row index per line, -1 for the root
    r_z: np.ndarray
    _bvp: np.ndarray     # b_v(p) = v0 + _bvp @ p
    _F: np.ndarray
    _h: np.ndarray

    def b_p(self, p) -> np.ndarray:
        return -(self.subtree @ np.asarray(p, dtype=float))

    def b_v(self, p) -> np.ndarray:
        return self.v0 + self._bvp @ np.asarray(p, dtype=float)

    def soc(self, p):
        """Cone data ``(A_n, b_n, c_n, d_n)`` stacked over lines."""
        bp = self.b_p(p)
        bv = self.b_v(p)
        v_up = np.where(self.up >= 0, bv[np.maximum(self.up, 0)], self.v0)
        b = np.zeros((self.n, 3))
        b[:, 0] = 2.0 * bp
        b[:, 2] = v_up
        return self._F, b, self._h, v_up

    def reconstruct(self, z, p):
        """``(P, v, q)`` implied by ``z`` and active injections ``p``."""
        z = np.asarray(z, dtype=float)
        return self.A_p @ z + self.b_p(p), self.A_v @ z + self.b_v(p), self.A_q @ z

    def point(self, z, p, network: RadialNetwork) -> OperatingPoint:
        P, v, _ = self.reconstruct(z, p)
        Q, ell = np.asarray(z[: self.n]), np.asarray(z[self.n:])
        top = network.parent[1:] == 0
        return OperatingPoint(p0=float(P[top].sum()), q0=float(Q[top].sum()),
                              P=P, Q=Q.copy(), ell=ell.copy(), v=v)

    def problem(self, network: RadialNetwork, p, q) -> ConicProblem:
        F, f, h, s = self.soc(p)
        return ConicProblem(cost=self.r_z, E=self.A_q, e=np.asarray(q, dtype=float),
                            G=self.A_v, g_lo=network.v_min, g_hi=network.v_max,
                            offset=self.b_v(p), F=F, f=f, h=h, s=s)


def build_maps(network: RadialNetwork) -> AffineMaps:
    n = network.n
    r, x = network.r, network.x
    S = np.zeros((n, n))
    for b in range(1, n + 1):
        S[b - 1, [k - 1 for k in network.subtree(b)]] = 1.0
    path = S.T  # path[i, j] = 1 iff bus j+1 is on the path from the root to bus i+1
    eye = np.eye(n)
    zero = np.zeros((n, n))

    A_p = np.hstack((zero, S * r[None, :]))
    A_q = np.hstack((-eye, np.diag(x)))
    for b in range(1, n + 1):
        for c in network.children[b]:
            A_q[b - 1, c - 1] = 1.0
    # v_n = v0 + sum over the path of (r^2 + x^2) ell_k - 2 r_k P_k - 2 x_k Q_k
    drop = np.hstack((np.diag(x), -np.diag(r**2 + x**2) / 2.0)) * -2.0
    A_v = path @ (drop - 2.0 * r[:, None] * A_p)
    bvp = 2.0 * path @ (r[:, None] * S)

    up = np.asarray(network.parent[1:]) - 1
    F = np.zeros((n, 3, 2 * n))
    h = np.zeros((n, 2 * n))
    for i in range(n):
        vrow = A_v[up[i]] if up[i] >= 0 else np.zeros(2 * n)
        F[i, 0] = 2.0 * A_p[i]
        F[i, 1, i] = 2.0
        F[i, 2] = vrow
        F[i, 2, n + i] -= 1.0
        h[i] = vrow
        h[i, n + i] += 1.0
    r_z = np.concatenate((np.zeros(n), r))
    for a in (A_p, A_v, A_q, S, up, r_z, bvp, F, h):
        a.setflags(write=False)
    return AffineMaps(n=n, v0=network.v0, A_p=A_p, A_v=A_v, A_q=A_q, subtree=S, up=up,
                      r_z=r_z, _bvp=bvp, _F=F, _h=h)


@dataclass
class PrimalSolution:
    z: np.ndarray
    value: float
    point: OperatingPoint
    dual: DualSolution
    result: IPMResult


def _check(result: IPMResult, what: str) -> None:
    if result.status == OPTIMAL:
        return
    if result.status == PRIMAL_INFEASIBLE:
        raise InfeasibleError(f"{what}: voltage limits cannot be met", result)
    if result.status == DUAL_INFEASIBLE:
        raise SolverFailure(f"{what}: solver reported an unbounded problem", result)
    raise SolverFailure(f"{what}: solver ended with status {result.status!r}", result)


def solve_primal(maps: AffineMaps, network: RadialNetwork, p, q,
                 solver=None) -> PrimalSolution:
    """Minimize total line loss over the relaxed branch flow set.

    Raises
    ------
    InfeasibleError
        If the voltage box cannot be met.
    SolverFailure
        For any other non-optimal solver outcome.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise ValueError("injections must be finite")
    solver = solver or IPMSolver()
    res = solver.solve(maps.problem(network, p, q))
    _check(res, "loss minimization")
    return PrimalSolution(z=res.z, value=res.primal_value,
                          point=maps.point(res.z, p, network), dual=res.dual, result=res)


def solve_dual(maps: AffineMaps, network: RadialNetwork, p, q, solver=None) -> DualSolution:
    """Maximize the conic dual directly (cross-check for multipliers read off the primal solve).

    Here the multipliers are primal variables of the solve, which converge
    more slowly than the objective, so the default solver runs at tol 1e-10.
    """
    n = maps.n
    F, b, c_vec, d = maps.soc(p)
    bv = maps.b_v(p)
    q = np.asarray(q, dtype=float)
    # variables: lam (n) | u (3n) | mu (n) | nu_lo (n) | nu_hi (n)
    iu, imu, ilo, ihi = n, 4 * n, 5 * n, 6 * n
    m = 7 * n
    obj = np.zeros(m)
    obj[:n] = -q
    obj[iu:imu] = b.reshape(-1)
    obj[imu:ilo] = -d
    obj[ilo:ihi] = network.v_min - bv
    obj[ihi:] = bv - network.v_max
    E = np.zeros((2 * n, m))
    E[:, :n] = maps.A_q.T
    E[:, iu:imu] = F.transpose(2, 0, 1).reshape(2 * n, 3 * n)
    E[:, imu:ilo] = -c_vec.T
    E[:, ilo:ihi] = -maps.A_v.T
    E[:, ihi:] = maps.A_v.T
    G = np.zeros((2 * n, m))
    G[:, ilo:] = np.eye(2 * n)
    Fd = np.zeros((n, 3, m))
    hd = np.zeros((n, m))
    for i in range(n):
        Fd[i, :, iu + 3 * i: iu + 3 * i + 3] = np.eye(3)
        hd[i, imu + i] = 1.0
    pb = ConicProblem(cost=-obj, E=E, e=-maps.r_z, G=G, g_lo=0.0, g_hi=np.inf,
                      F=Fd, f=np.zeros((n, 3)), h=hd, s=np.zeros(n))
    res = (solver or IPMSolver(tol=1e-10)).solve(pb)
    if res.status == DUAL_INFEASIBLE:
        raise InfeasibleError("dual unbounded: voltage limits cannot be met", res)
    if res.status != OPTIMAL:
        raise SolverFailure(f"dual solve ended with status {res.status!r}", res)
    w = res.z
    return DualSolution(lam=w[:n].copy(), u=w[iu:imu].reshape(n, 3).copy(),
                        mu=w[imu:ilo].copy(), nu_lo=w[ilo:ihi].copy(),
                        nu_hi=w[ihi:].copy(), dual_value=-res.primal_value)


@dataclass(frozen=True)
class ExactnessReport:
    gaps: np.ndarray
    exact: bool
    mu_min: float
    mu_certified: bool
    tol_cone: float
    tol_mu: float

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max(initial=0.0))

    def as_dict(self) -> dict:
        return {
            "exact": self.exact,
            "max_gap": self.max_gap,
            "gaps": self.gaps.tolist(),
            "mu_min": self.mu_min,
            "mu_certified": self.mu_certified,
            "tol_cone": self.tol_cone,
            "tol_mu": self.tol_mu,
        }


def cone_gaps(maps: AffineMaps, p, z) -> np.ndarray:
    """``ell_n - (P_n^2 + Q_n^2) / v_parent`` for every line."""
    z = np.asarray(z, dtype=float)
    P, v, _ = maps.reconstruct(z, p)
    Q, ell = z[: maps.n], z[maps.n:]
    v_up = np.where(maps.up >= 0, v[np.maximum(maps.up, 0)], maps.v0)
    return ell - (P**2 + Q**2) / v_up


def exactness_certificate(maps: AffineMaps, p, z, dual: DualSolution | None = None,
                          tol_cone: float = 1e-6, tol_mu: float = 1e-7) -> ExactnessReport:
    """Check whether the relaxed optimum satisfies the current equations.

    ``exact`` is decided from the primal gaps alone; ``mu_certified`` reports
    the dual sufficient condition (all cone multipliers bounded away from 0).
    The two flags are independent.
    """
    gaps = cone_gaps(maps, p, z)
    mu_min = float(np.min(dual.mu)) if dual is not None and maps.n else float("nan")
    return ExactnessReport(
        gaps=gaps,
        exact=bool(np.all(gaps <= tol_cone)),
        mu_min=mu_min,
        mu_certified=bool(dual is not None and mu_min >= tol_mu),
        tol_cone=tol_cone,
        tol_mu=tol_mu,
    )


@dataclass(frozen=True)
class ProbeReport:
    margin: float
    slacks: np.ndarray
    z: np.ndarray
    mode: str

    @property
    def strictly_feasible(self) -> bool:
        return self.margin > 0

    def as_dict(self) -> dict:
        return {"mode": self.mode, "margin": self.margin,
                "strictly_feasible": self.strictly_feasible, "slacks": self.slacks.tolist()}


def cone_slacks(maps: AffineMaps, p, z) -> np.ndarray:
    """``c_n' z + d_n - ||A_n z + b_n||`` per line."""
    F, b, c_vec, d = maps.soc(p)
    z = np.asarray(z, dtype=float)
    return c_vec @ z + d - np.linalg.norm(F @ z + b, axis=1)


def strict_feasibility_probe(maps: AffineMaps, network: RadialNetwork, p, q, solver=None,
                             mode: str = "max_loss") -> ProbeReport:
    """Look for a feasible point with every cone constraint strictly slack.

    ``mode="max_loss"`` maximizes the loss over the relaxed set and reports the
    smallest cone slack at the maximizer; ``mode="max_slack"`` maximizes that
    smallest slack directly.
    """
    solver = solver or IPMSolver()
    base = maps.problem(network, p, q)
    if mode == "max_loss":
        base.cost = -maps.r_z
        res = solver.solve(base)
        _check(res, "loss maximization")
        z = res.z
    elif mode == "max_slack":
        m = base.n_vars
        cost = np.zeros(m + 1)
        cost[-1] = -1.0
        pad = lambda M: np.hstack((M, np.zeros((M.shape[0], 1))))  # noqa: E731
        F = np.concatenate((base.F, np.zeros((maps.n, 3, 1))), axis=2)
        h = np.hstack((base.h, -np.ones((maps.n, 1))))
        pb = ConicProblem(cost=cost, E=pad(base.E), e=base.e, G=pad(base.G),
                          g_lo=base.g_lo, g_hi=base.g_hi, offset=base.offset,
                          F=F, f=base.f, h=h, s=base.s)
        res = solver.solve(pb)
        _check(res, "slack maximization")
        z = res.z[:m]
    else:
        raise ValueError(f"unknown probe mode {mode!r}")
    slacks = cone_slacks(maps, p, z)
    return ProbeReport(margin=float(slacks.min(initial=np.inf)), slacks=slacks, z=z, mode=mode)
