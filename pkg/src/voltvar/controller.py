"""Online reactive-power controllers.

The stochastic controller linearizes the loss with a dual multiplier and
keeps the l1 support price exact, so every update is a closed-form
soft-threshold followed by clipping to the inverter box.  The deterministic
and ideal baselines solve the full per-interval problem as one SOCP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .conic import OPTIMAL, PRIMAL_INFEASIBLE, ConicProblem, IPMSolver
from .network import PriceSchedule, RadialNetwork
from .relaxation import (AffineMaps, InfeasibleError, SolverFailure, exactness_certificate,
                         solve_primal)

SCHEDULE_KINDS = ("constant_horizon", "decaying", "scaled_decaying")


@dataclass(frozen=True)
class StepSizeSchedule:
    """Step-size rule ``eta_t``.

    Parameters
    ----------
    kind : {"constant_horizon", "decaying", "scaled_decaying"}
    D : float, optional
        Diameter bound of the setpoint box.  ``None`` means "derive from the box".
    L : float, optional
        Subgradient norm bound.  ``None`` means "running max of observed norms".
    T : int
        Horizon, used by ``constant_horizon`` only.
    beta : float
        Scale, used by ``scaled_decaying`` only.
    L_min : float
        Floor on the running-max estimate of ``L`` so that multipliers at
        the level of solver noise cannot inflate the step.
    """

    kind: str = "decaying"
    D: float | None = None
    L: float | None = None
    T: int = 1
    beta: float = 1.0
    L_min: float = 1e-3

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.D is not None and not self.D > 0:
            raise ValueError("D must be positive")
        if self.L is not None and not self.L > 0:
            raise ValueError("L must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.L_min > 0:
            raise ValueError("L_min must be positive")
        if self.kind == "constant_horizon" and self.T < 1:
            raise ValueError("constant_horizon needs T >= 1")

    @classmethod
    def constant(cls, eta: float) -> "StepSizeSchedule":
        """Fixed step ``eta`` at every interval."""
        return cls("constant_horizon", D=float(eta), L=1.0, T=1)

    def resolve(self, network: RadialNetwork) -> "StepSizeSchedule":
        """Fill ``D`` from the box when it was left unset."""
        if self.D is not None:
            return self
        return replace(self, D=default_diameter(network))


def default_diameter(network: RadialNetwork) -> float:
    """``sqrt(2 sum qbar_n^2)`` over controllable buses, floored at a tiny positive value."""
    half = np.maximum(np.abs(network.q_lo), np.abs(network.q_hi))
    return max(math.sqrt(2.0 * float(half @ half)), 1e-12)


def eta_at(schedule: StepSizeSchedule, t: int, L: float | None = None) -> float:
    """Step size at interval ``t >= 1``.

    ``L`` overrides ``schedule.L``; one of the two must be set, as must ``D``.

    >>> eta_at(StepSizeSchedule("decaying", D=1.0, L=1.0), 4)
    0.5
    """
    if t < 1:
        raise ValueError("step sizes are defined for t >= 1")
    L = schedule.L if L is None else L
    if schedule.D is None or L is None:
        raise ValueError("schedule needs D and L before it can be evaluated")
    if schedule.kind == "constant_horizon":
        return schedule.D / (L * math.sqrt(schedule.T))
    base = schedule.D / (L * math.sqrt(t))
    return schedule.beta * base if schedule.kind == "scaled_decaying" else base


@dataclass(frozen=True)
class ControllerState:
    """Single-owner state of the stochastic controller; steps return a new state."""

    q_hat: np.ndarray
    q_bar_sum: np.ndarray
    t: int
    schedule: StepSizeSchedule
    lam_norm_max: float = 0.0

    @classmethod
    def initial(cls, network: RadialNetwork,
                schedule: StepSizeSchedule | None = None) -> "ControllerState":
        """Start at ``q_hat = 0`` with ``D`` resolved from the box if needed."""
        schedule = (schedule or StepSizeSchedule()).resolve(network)
        return cls(np.zeros(network.n), np.zeros(network.n), 0, schedule)

    @property
    def q_bar(self) -> np.ndarray:
        """Running average of emitted setpoints (zero before the first step)."""
        return self.q_bar_sum / self.t if self.t else np.zeros_like(self.q_bar_sum)


def threshold_update(y, eta_c, q_lo, q_hi) -> np.ndarray:
    """Minimize ``0.5 (q - y)^2 + eta_c |q|`` over ``[q_lo, q_hi]`` entrywise.

    Parameters
    ----------
    y : array_like
        Unregularized targets.
    eta_c : array_like
        Nonnegative shrink amounts (step size times support price).
    q_lo, q_hi : array_like
        Box bounds with ``q_lo <= 0 <= q_hi``.

    Returns
    -------
    numpy.ndarray
        The five-case closed form: saturate high, shrink, dead band (closed),
        shrink, saturate low.

    Examples
    --------
    >>> threshold_update([0.5], [0.1], [-1.0], [1.0])
    array([0.4])
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ec = np.broadcast_to(np.asarray(eta_c, dtype=float), y.shape)
    lo = np.broadcast_to(np.asarray(q_lo, dtype=float), y.shape)
    hi = np.broadcast_to(np.asarray(q_hi, dtype=float), y.shape)
    if np.any(lo > hi):
        raise ValueError("q_lo exceeds q_hi")
    if np.any(ec < 0):
        raise ValueError("eta_c must be nonnegative")
    if np.any(lo > 0) or np.any(hi < 0):
        raise ValueError("box must contain zero")
    return kernels.soft_threshold_box(np.ascontiguousarray(y), np.ascontiguousarray(ec),
                                      np.ascontiguousarray(lo), np.ascontiguousarray(hi))


@dataclass
class StepDiagnostics:
    t: int
    eta: float
    value: float = math.nan
    lam: np.ndarray | None = None
    exact: bool = False
    max_cone_gap: float = math.nan
    flag: str | None = None
    dual_solves: int = 0
    threshold_updates: int = 0


def stochastic_step(state: ControllerState, network: RadialNetwork, maps: AffineMaps,
                    prices: PriceSchedule, observed_p, observed_qc, solver=None):
    """One interval of the dual-subgradient controller.

    Solves the relaxed loss minimization at ``(observed_p, q_hat - observed_qc)``,
    steps along ``lambda`` and soft-thresholds with ``eta_t c``.  On solver
    infeasibility or failure the previous setpoint is held and ``flag`` is set.

    Returns
    -------
    (ControllerState, numpy.ndarray, StepDiagnostics)
    """
    observed_p = np.asarray(observed_p, dtype=float)
    observed_qc = np.asarray(observed_qc, dtype=float)
    if observed_p.shape != (network.n,) or observed_qc.shape != (network.n,):
        raise ValueError(f"observations must have length {network.n}")
    if state.t < 0:
        raise ValueError("state.t must be nonnegative")
    t = state.t + 1
    q_prev = state.q_hat
    diag = StepDiagnostics(t=t, eta=math.nan)
    try:
        sol = solve_primal(maps, network, observed_p, q_prev - observed_qc, solver)
    except (InfeasibleError, SolverFailure) as exc:
        diag.flag = "infeasible" if isinstance(exc, InfeasibleError) else "solver_failure"
        diag.dual_solves = 1
        return _advance(state, q_prev, t, state.lam_norm_max), q_prev.copy(), diag

    lam = sol.dual.lam
    cert = exactness_certificate(maps, observed_p, sol.z, sol.dual)
    lam_max = max(state.lam_norm_max, float(np.linalg.norm(lam)))
    sched = state.schedule
    L = sched.L if sched.L is not None else max(lam_max, sched.L_min)
    eta = eta_at(sched, t, L)
    y = q_prev + eta * lam
    q_new = threshold_update(y, eta * prices.c, network.q_lo, network.q_hi)
    diag.eta = eta
    diag.value = sol.value
    diag.lam = lam
    diag.exact = cert.exact
    diag.max_cone_gap = cert.max_gap
    diag.dual_solves = 1
    diag.threshold_updates = 1
    return _advance(state, q_new, t, lam_max), q_new, diag


def _advance(state: ControllerState, q_new, t, lam_max) -> ControllerState:
    return ControllerState(q_hat=q_new, q_bar_sum=state.q_bar_sum + q_new, t=t,
                           schedule=state.schedule, lam_norm_max=lam_max)


@dataclass
class SetpointSolution:
    q_g: np.ndarray
    value: float
    z: np.ndarray
    exact: bool
    max_cone_gap: float


def setpoint_problem(network: RadialNetwork, maps: AffineMaps, prices: PriceSchedule,
                     p, qc) -> ConicProblem:
    """Joint SOCP in ``[z | q_g (controllable) | t (epigraph of |q_g|)]``."""
    n = network.n
    idx = network.controllable_index
    k = idx.size
    base = maps.problem(network, p, np.zeros(n))
    m = 2 * n + 2 * k
    sel = np.zeros((n, k))
    sel[idx, np.arange(k)] = 1.0
    cost = np.concatenate((maps.r_z, np.zeros(k), prices.c[idx]))
    E = np.hstack((maps.A_q, -sel, np.zeros((n, k))))
    e = -np.asarray(qc, dtype=float)
    ik = np.eye(k)
    zk = np.zeros((k, 2 * n))
    G = np.vstack((
        np.hstack((maps.A_v, np.zeros((n, 2 * k)))),
        np.hstack((zk, ik, np.zeros((k, k)))),
        np.hstack((zk, -ik, ik)),
        np.hstack((zk, ik, ik)),
    ))
    g_lo = np.concatenate((network.v_min, network.q_lo[idx], np.zeros(2 * k)))
    g_hi = np.concatenate((network.v_max, network.q_hi[idx], np.full(2 * k, np.inf)))
    offset = np.concatenate((base.offset, np.zeros(3 * k)))
    F = np.concatenate((base.F, np.zeros((n, 3, 2 * k))), axis=2)
    h = np.hstack((base.h, np.zeros((n, 2 * k))))
    return ConicProblem(cost=cost, E=E, e=e, G=G, g_lo=g_lo, g_hi=g_hi, offset=offset,
                        F=F, f=base.f, h=h, s=base.s)


def deterministic_step(network: RadialNetwork, maps: AffineMaps, prices: PriceSchedule,
                       observed_p, observed_qc, solver=None) -> SetpointSolution:
    """Per-interval optimum of loss plus support cost for the given injections.

    Raises
    ------
    InfeasibleError, SolverFailure
        The caller decides what to hold.
    """
    p = np.asarray(observed_p, dtype=float)
    qc = np.asarray(observed_qc, dtype=float)
    if p.shape != (network.n,) or qc.shape != (network.n,):
        raise ValueError(f"observations must have length {network.n}")
    res = (solver or IPMSolver()).solve(setpoint_problem(network, maps, prices, p, qc))
    if res.status == PRIMAL_INFEASIBLE:
        raise InfeasibleError("setpoint problem infeasible", res)
    if res.status != OPTIMAL:
        raise SolverFailure(f"setpoint problem ended with status {res.status!r}", res)
    n = network.n
    idx = network.controllable_index
    q_g = np.zeros(n)
    q_g[idx] = res.z[2 * n: 2 * n + idx.size]
    q_g = np.clip(q_g, network.q_lo, network.q_hi)
    cert = exactness_certificate(maps, p, res.z[: 2 * n])
    return SetpointSolution(q_g=q_g, value=res.primal_value, z=res.z[: 2 * n],
                            exact=cert.exact, max_cone_gap=cert.max_gap)


def ideal_step(network: RadialNetwork, maps: AffineMaps, prices: PriceSchedule,
               true_p, true_qc, solver=None) -> SetpointSolution:
    """Same optimization as :func:`deterministic_step`, fed the true injections."""
    return deterministic_step(network, maps, prices, true_p, true_qc, solver)
