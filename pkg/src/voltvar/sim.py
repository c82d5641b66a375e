"""Scenario generation, delayed observations, controller orchestration and cost accounting."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from .branchflow import SweepDivergence, power_loss, sweep_solve
from .controller import (ControllerState, StepSizeSchedule, deterministic_step, ideal_step,
                         stochastic_step)
from .network import PriceSchedule, RadialNetwork, clamp_to_region
from .relaxation import AffineMaps, InfeasibleError, SolverFailure, build_maps

CONTROLLERS = ("stochastic", "deterministic", "ideal")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Stationary Gaussian injections around a nominal profile.

    Entry ``i`` at interval ``t`` is ``nominal_i + noise_sigma * |nominal_i| * N(0, 1)``;
    controllers see the draw from ``delay_intervals`` earlier.
    """

    nominal_p: np.ndarray
    nominal_qc: np.ndarray
    noise_sigma: float = 0.3
    horizon: int = 100
    interval_seconds: float = 30.0
    delay_intervals: int = 2
    seed: int = 0
    realization: int = 0

    def __post_init__(self):
        p = np.asarray(self.nominal_p, dtype=float)
        qc = np.asarray(self.nominal_qc, dtype=float)
        if p.shape != qc.shape or p.ndim != 1:
            raise ValueError("nominal_p and nominal_qc must be vectors of equal length")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.delay_intervals < 0:
            raise ValueError("delay_intervals must be nonnegative")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not self.interval_seconds > 0:
            raise ValueError("interval_seconds must be positive")
        object.__setattr__(self, "nominal_p", p)
        object.__setattr__(self, "nominal_qc", qc)

    @classmethod
    def from_network(cls, network: RadialNetwork, **kw) -> "Scenario":
        return cls(network.nominal_p(), network.nominal_qc(), **kw)

    def true_at(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self.seed, self.realization, t])
        n = self.nominal_p.size
        eps = rng.standard_normal((2, n))
        sig = self.noise_sigma
        return (self.nominal_p + sig * np.abs(self.nominal_p) * eps[0],
                self.nominal_qc + sig * np.abs(self.nominal_qc) * eps[1])

    def injections(self, t: int):
        return gen_gaussian(self, t)


def gen_gaussian(scenario: Scenario, t: int):
    """``(true_p, true_qc, observed_p, observed_qc)`` at interval ``t``.

    Draws depend only on ``(seed, realization, t)``, so any interval can be
    regenerated in isolation.
    """
    if not 0 <= t < scenario.horizon:
        raise ValueError(f"t={t} outside [0, {scenario.horizon})")
    true_p, true_qc = scenario.true_at(t)
    d = scenario.delay_intervals
    if t >= d:
        obs_p, obs_qc = scenario.true_at(t - d) if d else (true_p, true_qc)
    else:
        obs_p, obs_qc = scenario.nominal_p, scenario.nominal_qc
    return true_p, true_qc, obs_p.copy(), obs_qc.copy()


# -- traces --------------------------------------------------------------------

TRACE_KINDS = ("pg", "pc", "qc")


@dataclass(frozen=True, eq=False)
class TraceData:
    """Per-bus series sampled every ``cadence`` seconds; arrays are ``(samples, N)``."""

    cadence: float
    pg: np.ndarray
    pc: np.ndarray
    qc: np.ndarray
    start: float = 0.0
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.cadence > 0:
            raise ValueError("cadence must be positive")
        shapes = {self.pg.shape, self.pc.shape, self.qc.shape}
        if len(shapes) != 1 or self.pg.ndim != 2:
            raise ValueError("trace arrays must share one (samples, N) shape")
        if not all(np.all(np.isfinite(a)) for a in (self.pg, self.pc, self.qc)):
            raise ValueError("trace values must be finite")

    @property
    def samples(self) -> int:
        return self.pg.shape[0]

    def index_at(self, seconds: float) -> int:
        """Zero-order hold: latest sample at or before ``seconds``."""
        return int(math.floor(seconds / self.cadence + 1e-9))

    def intervals(self, interval_seconds: float) -> int:
        """Number of control intervals the trace covers."""
        return int(math.floor(self.samples * self.cadence / interval_seconds + 1e-9))


@dataclass(frozen=True, eq=False)
class TraceSource:
    """Trace replay with the same delay semantics as :class:`Scenario`."""

    trace: TraceData
    horizon: int
    interval_seconds: float = 30.0
    delay_intervals: int = 2

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.delay_intervals < 0:
            raise ValueError("delay_intervals must be nonnegative")
        if self.trace.intervals(self.interval_seconds) < self.horizon:
            raise ValueError(
                f"trace covers {self.trace.intervals(self.interval_seconds)} intervals, "
                f"horizon is {self.horizon}")

    def true_at(self, t: int):
        k = self.trace.index_at(t * self.interval_seconds)
        tr = self.trace
        return tr.pg[k] - tr.pc[k], tr.qc[k].copy()

    def injections(self, t: int):
        if not 0 <= t < self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon})")
        true_p, true_qc = self.true_at(t)
        obs = self.true_at(max(t - self.delay_intervals, 0))
        return true_p, true_qc, obs[0], obs[1]


def _parse_time(raw: str) -> float:
    raw = raw.strip()
    try:
        return float(int(raw))
    except ValueError:
        return datetime.fromisoformat(raw).timestamp()


def load_trace(path: str | Path, network: RadialNetwork) -> TraceData:
    """Read a ``timestamp,bus,kind,value_pu`` CSV.

    Series absent from the file default to the feeder's nominal value for
    that bus.  Timestamps must lie on one uniform grid with every
    ``(bus, kind)`` present at every timestamp it appears in.
    """
    rows: dict[float, dict[tuple[int, str], float]] = {}
    present: set[tuple[int, str]] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"timestamp", "bus", "kind", "value_pu"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"trace header must contain {sorted(need)}")
        for line_no, rec in enumerate(reader, start=2):
            try:
                ts = _parse_time(rec["timestamp"])
                bus = int(rec["bus"])
                kind = rec["kind"].strip()
                val = float(rec["value_pu"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from exc
            if kind not in TRACE_KINDS:
                raise ValueError(f"{path}:{line_no}: unknown kind {kind!r}")
            if not 1 <= bus <= network.n:
                raise ValueError(f"{path}:{line_no}: bus {bus} not in feeder")
            if not math.isfinite(val):
                raise ValueError(f"{path}:{line_no}: non-finite value")
            rows.setdefault(ts, {})[(bus, kind)] = val
            present.add((bus, kind))
    if not rows:
        raise ValueError(f"{path}: empty trace")
    times = np.array(sorted(rows))
    if times.size > 1:
        steps = np.diff(times)
        if not np.allclose(steps, steps[0], rtol=0, atol=1e-6):
            raise ValueError(f"{path}: timestamps are not on a fixed cadence")
        cadence = float(steps[0])
    else:
        cadence = 1.0
    base = {"pg": np.array([b.p_g for b in network.buses[1:]]),
            "pc": np.array([b.p_c for b in network.buses[1:]]),
            "qc": network.nominal_qc()}
    arrays = {k: np.tile(v, (times.size, 1)) for k, v in base.items()}
    for i, ts in enumerate(times):
        got = rows[ts]
        missing = [key for key in present if key not in got]
        if missing:
            raise ValueError(f"{path}: timestamp {ts:g} lacks {sorted(missing)[0]}")
        for (bus, kind), val in got.items():
            arrays[kind][i, bus - 1] = val
    return TraceData(cadence=cadence, start=float(times[0]), normalization={"unit": "pu"},
                     **arrays)


# -- cost accounting -----------------------------------------------------------

@dataclass
class CostRecord:
    """One interval of one realization; absent controllers carry NaN."""

    t: int
    cost: dict = field(default_factory=dict)
    loss_pu: dict = field(default_factory=dict)
    setpoints: dict = field(default_factory=dict)
    exact: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    v_min_observed: dict = field(default_factory=dict)
    v_max_observed: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def cost_stochastic(self) -> float:
        return self.cost.get("stochastic", math.nan)

    @property
    def cost_deterministic(self) -> float:
        return self.cost.get("deterministic", math.nan)

    @property
    def cost_ideal(self) -> float:
        return self.cost.get("ideal", math.nan)


def currency_per_hour(network: RadialNetwork, prices: PriceSchedule, loss_pu: float,
                      setpoint) -> float:
    """Dollars per hour: loss priced at ``c0_tilde`` plus support priced at ``c_tilde``."""
    kva = network.base_kva
    cents = prices.c0_tilde * loss_pu * kva + float(prices.c_tilde @ np.abs(setpoint)) * kva
    return cents / 100.0


def true_cost(network: RadialNetwork, prices: PriceSchedule, true_p, true_qc, setpoint) -> dict:
    """Physical cost of applying ``setpoint`` (clamped to the box) at the true injections.

    Returns a dict with ``cost`` ($/h), ``loss_pu``, ``v_min``, ``v_max`` and
    ``flag``; a non-converging sweep yields NaN cost and ``flag="sweep_divergence"``.
    """
    q = clamp_to_region(setpoint, network)
    try:
        point = sweep_solve(network, true_p, q - np.asarray(true_qc, dtype=float))
    except SweepDivergence:
        return dict(cost=math.nan, loss_pu=math.nan, v_min=math.nan, v_max=math.nan,
                    flag="sweep_divergence")
    loss = power_loss(network, point)
    vmag = np.sqrt(point.v)
    return dict(cost=currency_per_hour(network, prices, loss, q), loss_pu=loss,
                v_min=float(vmag.min()), v_max=float(vmag.max()), flag=None)


# -- orchestration -------------------------------------------------------------

def run_experiment(network: RadialNetwork, prices: PriceSchedule, source,
                   controllers=CONTROLLERS, schedule: StepSizeSchedule | None = None,
                   solver=None, maps: AffineMaps | None = None) -> list[CostRecord]:
    """Run the requested controllers over ``source.horizon`` intervals.

    ``source`` is a :class:`Scenario` or :class:`TraceSource`.  All controllers
    start at zero; a controller whose solve fails holds its previous setpoint
    and the failure is recorded in ``flags``.
    """
    controllers = tuple(controllers)
    unknown = set(controllers) - set(CONTROLLERS)
    if unknown or not controllers:
        raise ValueError(f"controllers must be a nonempty subset of {CONTROLLERS}")
    if np.shape(source.true_at(0)[0]) != (network.n,):
        raise ValueError("scenario dimension does not match the feeder")
    maps = maps or build_maps(network)
    state = ControllerState.initial(network, schedule)
    held = {name: np.zeros(network.n) for name in controllers}
    records = []
    for t in range(source.horizon):
        true_p, true_qc, obs_p, obs_qc = source.injections(t)
        rec = CostRecord(t=t)
        for name in controllers:
            flag = None
            if name == "stochastic":
                state, q, diag = stochastic_step(state, network, maps, prices, obs_p, obs_qc,
                                                 solver)
                flag, exact = diag.flag, diag.exact
                rec.diagnostics[name] = dict(eta=diag.eta, dual_solves=diag.dual_solves,
                                             threshold_updates=diag.threshold_updates)
            else:
                inputs = (obs_p, obs_qc) if name == "deterministic" else (true_p, true_qc)
                step = deterministic_step if name == "deterministic" else ideal_step
                try:
                    sol = step(network, maps, prices, *inputs, solver)
                    q, exact = sol.q_g, sol.exact
                except (InfeasibleError, SolverFailure) as exc:
                    q, exact = held[name], False
                    flag = "infeasible" if isinstance(exc, InfeasibleError) else "solver_failure"
            held[name] = q
            ev = true_cost(network, prices, true_p, true_qc, q)
            rec.cost[name] = ev["cost"]
            rec.loss_pu[name] = ev["loss_pu"]
            rec.setpoints[name] = q.copy()
            rec.exact[name] = bool(exact)
            rec.flags[name] = flag or ev["flag"]
            rec.v_min_observed[name] = ev["v_min"]
            rec.v_max_observed[name] = ev["v_max"]
        records.append(rec)
    return records


@dataclass
class MonteCarloResult:
    controllers: tuple
    mean_cost: dict          # controller -> (T,) mean over realizations, NaN-aware
    costs: dict              # controller -> (R, T)
    records: list | None     # per-realization record lists when kept
    warnings: int

    def steady_state(self, name: str, tail: float = 0.5) -> float:
        """Mean of the last ``tail`` fraction of the mean cost curve."""
        curve = self.mean_cost[name]
        start = int(len(curve) * (1.0 - tail))
        return float(np.nanmean(curve[start:]))

    def convergence_interval(self, name: str, rel: float = 0.1, tail: float = 0.5) -> int | None:
        """First interval whose mean cost lies within ``rel`` of the steady state."""
        ss = self.steady_state(name, tail)
        hit = np.flatnonzero(np.abs(self.mean_cost[name] - ss) <= rel * abs(ss))
        return int(hit[0]) if hit.size else None


def _one_realization(args):
    network, prices, source, controllers, schedule, solver = args
    return run_experiment(network, prices, source, controllers, schedule, solver)


def monte_carlo(network: RadialNetwork, prices: PriceSchedule, scenario: Scenario,
                realizations: int = 40, controllers=CONTROLLERS,
                schedule: StepSizeSchedule | None = None, solver=None,
                workers: int = 1, keep_records: bool = False) -> MonteCarloResult:
    """Average cost curves over independent realizations of ``scenario``."""
    if realizations < 1:
        raise ValueError("realizations must be at least 1")
    jobs = [(network, prices, replace(scenario, realization=k), controllers, schedule, solver)
            for k in range(realizations)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_one_realization, jobs))
    else:
        runs = [_one_realization(j) for j in jobs]
    controllers = tuple(controllers)
    costs = {c: np.array([[rec.cost[c] for rec in run] for run in runs]) for c in controllers}
    warnings = sum(1 for run in runs for rec in run for c in controllers if rec.flags[c])
    with np.errstate(all="ignore"):
        mean = {c: np.nanmean(costs[c], axis=0) for c in controllers}
    return MonteCarloResult(controllers, mean, costs, runs if keep_records else None, warnings)
