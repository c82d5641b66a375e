"""Command-line entry point: ``voltvar run | validate | certify``.

Exit codes: 0 completed (possibly with warnings), 2 config or IO error,
3 internal failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .branchflow import SweepDivergence, residual_check, sweep_solve
from .controller import StepSizeSchedule
from .kernels import BACKEND
from .network import NetworkError, PriceSchedule, load_feeder, load_fixture
from .relaxation import (InfeasibleError, SolverFailure, build_maps, exactness_certificate,
                         solve_primal, strict_feasibility_probe)
from .sim import (CONTROLLERS, MonteCarloResult, Scenario, TraceSource, load_trace, monte_carlo,
                  run_experiment)

log = logging.getLogger("voltvar")

EXIT_OK, EXIT_CONFIG, EXIT_INTERNAL = 0, 2, 3

CSV_FIELDS = ("cost", "loss_pu", "exact", "v_min", "v_max", "flag")


class ConfigError(Exception):
    """Bad configuration or unreadable input file."""


def csv_header() -> list[str]:
    """Column order of ``costs.csv``; every controller always gets its columns."""
    return ["t"] + [f"{f}_{c}" for f in CSV_FIELDS for c in CONTROLLERS]


# -- config --------------------------------------------------------------------

DEFAULTS = {
    "mode": "gaussian",
    "controllers": list(CONTROLLERS),
    "scenario": {"noise_sigma": 0.3, "horizon": 100, "interval_seconds": 30.0,
                 "delay_intervals": 2},
    "schedule": {"kind": "decaying"},
    "prices": {"c0_tilde": 6.6, "ratio": 80.0},
    "realizations": 1,
    "seed": 0,
    "output": "voltvar_out",
    "per_realization": False,
    "workers": 1,
}


def load_config(path: str | Path, args: argparse.Namespace | None = None) -> dict:
    path = Path(path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg = {**DEFAULTS, **raw}
    cfg["scenario"] = {**DEFAULTS["scenario"], **raw.get("scenario", {})}
    cfg["_base"] = path.parent
    if args is not None:
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.realizations is not None:
            cfg["realizations"] = args.realizations
        if args.controllers is not None:
            cfg["controllers"] = [c.strip() for c in args.controllers.split(",") if c.strip()]
        if args.eta is not None:
            cfg["schedule"] = {"kind": "constant_horizon", "D": args.eta, "L": 1.0, "T": 1}
        if args.output is not None:
            cfg["output"] = args.output
    if int(cfg["realizations"]) < 1:
        raise ConfigError("realizations must be at least 1")
    bad = set(cfg["controllers"]) - set(CONTROLLERS)
    if bad or not cfg["controllers"]:
        raise ConfigError(f"controllers must be a nonempty subset of {list(CONTROLLERS)}")
    if cfg["mode"] not in ("gaussian", "trace"):
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    return cfg


def _resolve(cfg: dict, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else cfg["_base"] / q


def _load_network(cfg: dict):
    if "fixture" in cfg:
        return load_fixture(cfg["fixture"])
    if "feeder" not in cfg:
        raise ConfigError("config needs 'feeder' (path) or 'fixture' (name)")
    path = _resolve(cfg, cfg["feeder"])
    if not path.exists():
        raise ConfigError(f"feeder file not found: {path}")
    return load_feeder(path)


def _prices(cfg: dict, network) -> PriceSchedule:
    pr = cfg["prices"]
    if "c_tilde" in pr:
        return PriceSchedule.for_network(network, float(pr.get("c0_tilde", 6.6)), pr["c_tilde"])
    return PriceSchedule.uniform(network, float(pr.get("c0_tilde", 6.6)), pr.get("ratio", 80.0))


# -- run -----------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, float) and math.isnan(v):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _records_rows(records) -> list[dict]:
    rows = []
    for rec in records:
        row = {"t": rec.t}
        for c in CONTROLLERS:
            row[f"cost_{c}"] = rec.cost.get(c)
            row[f"loss_pu_{c}"] = rec.loss_pu.get(c)
            row[f"exact_{c}"] = rec.exact.get(c)
            row[f"v_min_{c}"] = rec.v_min_observed.get(c)
            row[f"v_max_{c}"] = rec.v_max_observed.get(c)
            row[f"flag_{c}"] = rec.flags.get(c)
        rows.append(row)
    return rows


def _mean_rows(runs, controllers) -> list[dict]:
    """Realization-averaged rows: mean cost/loss, all-exact, voltage envelope, flag count."""
    horizon = len(runs[0])
    rows = []
    for t in range(horizon):
        recs = [run[t] for run in runs]
        row = {"t": t}
        for c in CONTROLLERS:
            if c not in controllers:
                for f in CSV_FIELDS:
                    row[f"{f}_{c}"] = None
                continue
            with np.errstate(all="ignore"):
                row[f"cost_{c}"] = float(np.nanmean([r.cost[c] for r in recs]))
                row[f"loss_pu_{c}"] = float(np.nanmean([r.loss_pu[c] for r in recs]))
                row[f"v_min_{c}"] = float(np.nanmin([r.v_min_observed[c] for r in recs]))
                row[f"v_max_{c}"] = float(np.nanmax([r.v_max_observed[c] for r in recs]))
            row[f"exact_{c}"] = all(r.exact[c] for r in recs)
            n_flag = sum(1 for r in recs if r.flags[c])
            row[f"flag_{c}"] = f"{n_flag} flagged" if n_flag else None
        rows.append(row)
    return rows


def write_costs(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = csv_header()
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row.get(k)) for k in header])


def summarize(result, controllers, tail: float = 0.5) -> dict:
    ss = {c: result.steady_state(c, tail) for c in controllers}
    savings = {}
    for a, b in (("deterministic", "stochastic"), ("deterministic", "ideal"),
                 ("stochastic", "ideal")):
        if a in ss and b in ss:
            savings[f"{b}_vs_{a}"] = ss[a] - ss[b]
    return {
        "steady_state_cost_per_hour": ss,
        "savings_per_hour": savings,
        "convergence_interval": {c: result.convergence_interval(c, tail=tail)
                                 for c in controllers},
        "warnings": result.warnings,
        "realizations": len(next(iter(result.costs.values()))),
        "backend": BACKEND,
        "version": __version__,
    }


def run(cfg: dict) -> int:
    network = _load_network(cfg)
    prices = _prices(cfg, network)
    try:
        schedule = StepSizeSchedule(**cfg["schedule"])
    except TypeError as exc:
        raise ConfigError(f"bad schedule: {exc}") from exc
    controllers = tuple(c for c in CONTROLLERS if c in cfg["controllers"])
    out = _resolve(cfg, cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    sc = cfg["scenario"]
    if cfg["mode"] == "trace":
        tr = cfg.get("trace") or {}
        if "path" not in tr:
            raise ConfigError("trace mode needs trace.path")
        tpath = _resolve(cfg, tr["path"])
        if not tpath.exists():
            raise ConfigError(f"trace file not found: {tpath}")
        trace = load_trace(tpath, network)
        interval = float(tr.get("interval_seconds", sc["interval_seconds"]))
        horizon = int(tr.get("horizon", trace.intervals(interval)))
        source = TraceSource(trace, horizon, interval,
                             int(tr.get("delay_intervals", sc["delay_intervals"])))
        runs = [run_experiment(network, prices, source, controllers, schedule)]
        costs = {c: np.array([[r.cost[c] for r in runs[0]]]) for c in controllers}
        warnings = sum(1 for r in runs[0] for c in controllers if r.flags[c])
        result = MonteCarloResult(controllers, {c: costs[c][0] for c in controllers}, costs,
                                  runs, warnings)
    else:
        scenario = Scenario.from_network(
            network, noise_sigma=float(sc["noise_sigma"]), horizon=int(sc["horizon"]),
            interval_seconds=float(sc["interval_seconds"]),
            delay_intervals=int(sc["delay_intervals"]), seed=int(cfg["seed"]))
        result = monte_carlo(network, prices, scenario, int(cfg["realizations"]), controllers,
                             schedule, workers=int(cfg["workers"]), keep_records=True)
    runs = result.records
    rows = _records_rows(runs[0]) if len(runs) == 1 else _mean_rows(runs, controllers)
    write_costs(out / "costs.csv", rows)
    if cfg["per_realization"] and len(runs) > 1:
        for k, recs in enumerate(runs):
            write_costs(out / f"costs_r{k:03d}.csv", _records_rows(recs))
    summary = summarize(result, controllers)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    if result.warnings:
        log.warning("%d controller/sweep warnings recorded in costs.csv", result.warnings)
    print(json.dumps(summary["steady_state_cost_per_hour"]))
    return EXIT_OK


# -- validate / certify --------------------------------------------------------

def validate(feeder: str) -> dict:
    network = load_feeder(feeder)
    p, qc = network.nominal_p(), network.nominal_qc()
    report = {
        "name": network.name,
        "buses": network.n + 1,
        "lines": network.n,
        "controllable": [int(i) + 1 for i in network.controllable_index],
        "total_p_load_pu": float(sum(b.p_c for b in network.buses)),
        "total_q_load_pu": float(qc.sum()),
        "radial": True,
    }
    try:
        pt = sweep_solve(network, p, -qc)
        rep = residual_check(network, p, -qc, pt)
        report["nominal_flow"] = {"converged": True, "v_min": float(np.sqrt(pt.v.min())),
                                  "v_max": float(np.sqrt(pt.v.max())),
                                  "voltage_violation": rep.voltage_box,
                                  "max_residual": rep.max_equation}
    except SweepDivergence as exc:
        report["nominal_flow"] = {"converged": False, "message": str(exc)}
    return report


def _read_vector(path: str, n: int, what: str) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=1, dtype=float).reshape(-1)
    except OSError as exc:
        raise ConfigError(f"{what} file not found: {path}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data.size != n:
        raise ConfigError(f"{path}: expected {n} values, got {data.size}")
    return data


def certify(feeder: str, p_path: str, q_path: str) -> dict:
    network = load_feeder(feeder)
    p = _read_vector(p_path, network.n, "--p")
    q = _read_vector(q_path, network.n, "--q")
    maps = build_maps(network)
    try:
        sol = solve_primal(maps, network, p, q)
    except InfeasibleError:
        return {"feasible": False}
    cert = exactness_certificate(maps, p, sol.z, sol.dual)
    report = {"feasible": True, "loss_pu": sol.value, "exactness": cert.as_dict()}
    for mode in ("max_loss", "max_slack"):
        try:
            report[f"probe_{mode}"] = strict_feasibility_probe(maps, network, p, q,
                                                               mode=mode).as_dict()
        except (InfeasibleError, SolverFailure) as exc:
            report[f"probe_{mode}"] = {"mode": mode, "error": str(exc)}
    return report


# -- argparse ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="voltvar", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--eta", type=float, help="constant step size (overrides the schedule)")
    r.add_argument("--seed", type=int)
    r.add_argument("--realizations", type=int)
    r.add_argument("--controllers", help="comma list from stochastic,deterministic,ideal")
    r.add_argument("--output", help="output directory")

    v = sub.add_parser("validate", help="check a feeder file and report its invariants")
    v.add_argument("--feeder", required=True)

    c = sub.add_parser("certify", help="exactness and strict-feasibility report")
    c.add_argument("--feeder", required=True)
    c.add_argument("--p", required=True, help="CSV of net active injections (pu)")
    c.add_argument("--q", required=True, help="CSV of net reactive injections (pu)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.command == "run":
            return run(load_config(args.config, args))
        feeder = args.feeder
        if not Path(feeder).exists():
            raise ConfigError(f"feeder file not found: {feeder}")
        if args.command == "validate":
            report = validate(feeder)
        else:
            report = certify(feeder, args.p, args.q)
        print(json.dumps(report, indent=2))
        return EXIT_OK
    except (ConfigError, NetworkError, ValueError, OSError) as exc:
        print(f"voltvar: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("internal failure", exc_info=True)
        print(f"voltvar: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
