"""Branch flow equations, a sweep power-flow oracle and the line loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .network import RadialNetwork


class SweepDivergence(RuntimeError):
    """The sweep did not converge; ``residuals`` holds the last iterate's report."""

    def __init__(self, message: str, residuals: "ResidualReport | None" = None,
                 iterations: int = 0):
        super().__init__(message)
        self.residuals = residuals
        self.iterations = iterations


@dataclass(frozen=True)
class OperatingPoint:
    """Grid state in squared magnitudes; line arrays are indexed by ``bus - 1``."""

    p0: float
    q0: float
    P: np.ndarray
    Q: np.ndarray
    ell: np.ndarray
    v: np.ndarray

    def replace(self, **kw) -> "OperatingPoint":
        d = dict(p0=self.p0, q0=self.q0, P=self.P, Q=self.Q, ell=self.ell, v=self.v)
        d.update(kw)
        return OperatingPoint(**d)


@dataclass(frozen=True)
class ResidualReport:
    active: float
    reactive: float
    voltage: float
    current: float
    voltage_box: float

    @property
    def max_equation(self) -> float:
        """Largest residual over the four equation families (box excluded)."""
        return max(self.active, self.reactive, self.voltage, self.current)

    def as_dict(self) -> dict:
        return {
            "active": self.active,
            "reactive": self.reactive,
            "voltage": self.voltage,
            "current": self.current,
            "voltage_box": self.voltage_box,
        }


def _upstream_voltage(network: RadialNetwork, v: np.ndarray) -> np.ndarray:
    par = network.parent[1:]
    vfull = np.concatenate(([network.v0], v))
    return vfull[par]


def _child_sums(network: RadialNetwork, flows: np.ndarray) -> np.ndarray:
    out = np.zeros(network.n)
    par = network.parent[1:]
    mask = par != 0
    np.add.at(out, par[mask] - 1, flows[mask])
    return out


def equation_residuals(network: RadialNetwork, p, q, point: OperatingPoint) -> np.ndarray:
    """Signed residuals, one row per equation family (active, reactive, voltage, current)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    P, Q, ell, v = point.P, point.Q, point.ell, point.v
    r, x = network.r, network.x
    v_up = _upstream_voltage(network, v)
    res_p = _child_sums(network, P) - (P - r * ell) - p
    res_q = _child_sums(network, Q) - (Q - x * ell) - q
    res_v = v_up + (r**2 + x**2) * ell - 2 * (r * P + x * Q) - v
    with np.errstate(divide="ignore", invalid="ignore"):
        res_l = ell - (P**2 + Q**2) / v_up
    return np.vstack([res_p, res_q, res_v, res_l])


def residual_check(network: RadialNetwork, p, q, point: OperatingPoint) -> ResidualReport:
    """Max absolute residual of each branch flow equation family and of the voltage box."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = network.n
    for name, vec in (("p", p), ("q", q), ("P", point.P), ("Q", point.Q),
                      ("ell", point.ell), ("v", point.v)):
        if np.shape(vec) != (n,):
            raise ValueError(f"{name} must have length {n}")
    res = np.abs(equation_residuals(network, p, q, point))
    box = np.maximum(network.v_min - point.v, point.v - network.v_max)
    return ResidualReport(
        active=float(res[0].max(initial=0.0)),
        reactive=float(res[1].max(initial=0.0)),
        voltage=float(res[2].max(initial=0.0)),
        current=float(res[3].max(initial=0.0)),
        voltage_box=float(max(0.0, box.max(initial=0.0))),
    )


def sweep_solve(network: RadialNetwork, p, q, tol: float = 1e-10,
                max_iter: int = 500) -> OperatingPoint:
    """Solve the branch flow equations by backward/forward sweeps.

    Starts lossless (``ell = 0``) and iterates until the max-norm change in
    ``ell`` drops to ``tol``.  Voltage limits are not enforced.

    Raises
    ------
    SweepDivergence
        If ``max_iter`` sweeps do not converge or a voltage collapses.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (network.n,) or q.shape != (network.n,):
        raise ValueError(f"injections must have length {network.n}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise ValueError("injections must be finite")
    P, Q, ell, v, iters, change, converged = kernels.sweep(
        network.parent, network.order, network.r, network.x, p, q,
        network.v0, tol, max_iter)
    point = _assemble(network, P, Q, ell, v)
    if not converged:
        report = residual_check(network, p, q, point) if np.all(v > 0) else None
        raise SweepDivergence(
            f"sweep did not converge in {iters} iterations (last change {change:.3e})",
            report, iters)
    return point


def _assemble(network: RadialNetwork, P, Q, ell, v) -> OperatingPoint:
    top = np.asarray(network.parent[1:]) == 0
    return OperatingPoint(p0=float(P[top].sum()), q0=float(Q[top].sum()),
                          P=P, Q=Q, ell=ell, v=v)


def power_loss(network: RadialNetwork, point: OperatingPoint) -> float:
    """Total line loss ``sum_n r_n ell_n`` in per-unit."""
    ell = np.asarray(point.ell)
    if ell.shape != (network.n,):
        raise ValueError(f"ell must have length {network.n}")
    return float(network.r @ ell)


def flat_point(network: RadialNetwork) -> OperatingPoint:
    """No-load state: zero flows and ``v = v0`` everywhere."""
    z = np.zeros(network.n)
    return OperatingPoint(0.0, 0.0, z, z.copy(), z.copy(), np.full(network.n, network.v0))
