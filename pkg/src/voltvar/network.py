"""Radial feeder data model.

Buses are indexed ``0..N`` with the substation at ``0``; line ``n`` feeds
bus ``n`` from its parent.  Every per-bus vector handed to the numerical
layers (injections, limits, setpoints) has length ``N`` and covers the
non-root buses only, so bus ``n`` lives at position ``n - 1``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BUS_KINDS = ("substation", "load", "dg", "shunt")

V_MIN_DEFAULT = 0.95**2
V_MAX_DEFAULT = 1.05**2


class NetworkError(ValueError):
    """Raised when feeder data violates the radial model invariants."""


@dataclass(frozen=True)
class Bus:
    id: int
    parent: int | None
    kind: str = "load"
    p_c: float = 0.0
    q_c: float = 0.0
    p_g: float = 0.0
    q_g_min: float = 0.0
    q_g_max: float = 0.0
    v_min: float = V_MIN_DEFAULT
    v_max: float = V_MAX_DEFAULT

    @property
    def controllable(self) -> bool:
        return self.q_g_max > 0.0


@dataclass(frozen=True)
class Line:
    child: int
    r: float
    x: float


@dataclass(frozen=True, eq=False)
class RadialNetwork:
    """Validated radial feeder.  Build with :func:`build_network`."""

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    v0: float
    base_kva: float
    parent: np.ndarray
    children: tuple[tuple[int, ...], ...]
    order: tuple[int, ...]
    r: np.ndarray
    x: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray
    name: str = ""

    @property
    def n(self) -> int:
        """Number of non-root buses (and lines)."""
        return len(self.buses) - 1

    @property
    def controllable(self) -> np.ndarray:
        return self.q_hi > 0.0

    @property
    def controllable_index(self) -> np.ndarray:
        return np.flatnonzero(self.controllable)

    def nominal_p(self) -> np.ndarray:
        """Net active injections ``p_g - p_c`` of non-root buses."""
        return np.array([b.p_g - b.p_c for b in self.buses[1:]])

    def nominal_qc(self) -> np.ndarray:
        return np.array([b.q_c for b in self.buses[1:]])

    def subtree(self, n: int) -> list[int]:
        """Buses in the subtree rooted at ``n`` (including ``n``)."""
        out, stack = [], [n]
        while stack:
            k = stack.pop()
            out.append(k)
            stack.extend(self.children[k])
        return out

    def path_to_root(self, n: int) -> list[int]:
        """Non-root buses on the path from ``n`` up to (excluding) the root."""
        out = []
        while n != 0:
            out.append(n)
            n = int(self.parent[n])
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RadialNetwork):
            return NotImplemented
        return (
            self.buses == other.buses
            and self.lines == other.lines
            and self.v0 == other.v0
            and self.base_kva == other.base_kva
        )

    def __hash__(self) -> int:
        return hash((self.buses, self.lines, self.v0, self.base_kva))


@dataclass(frozen=True, eq=False)
class PriceSchedule:
    """Loss price (cents/kWh) and per-bus reactive support prices (cents/kVar h)."""

    c0_tilde: float
    c_tilde: np.ndarray

    def __post_init__(self):
        c_tilde = np.asarray(self.c_tilde, dtype=float)
        if not self.c0_tilde > 0:
            raise NetworkError("loss price c0_tilde must be positive")
        if np.any(c_tilde < 0):
            raise NetworkError("reactive support prices must be nonnegative")
        c_tilde.setflags(write=False)
        object.__setattr__(self, "c_tilde", c_tilde)

    @property
    def c(self) -> np.ndarray:
        """Normalized prices ``c_tilde / c0_tilde``."""
        return self.c_tilde / self.c0_tilde

    @classmethod
    def uniform(cls, network: RadialNetwork, c0_tilde: float = 6.6,
                ratio: float | None = 80.0) -> "PriceSchedule":
        """Same support price ``c0_tilde / ratio`` at every controllable bus.

        ``ratio=None`` gives zero support prices (pure loss minimization).
        """
        c = np.zeros(network.n)
        if ratio is not None:
            c[network.controllable] = c0_tilde / ratio
        return cls(c0_tilde, c)

    @classmethod
    def for_network(cls, network: RadialNetwork, c0_tilde: float,
                    c_tilde: Sequence[float] | np.ndarray) -> "PriceSchedule":
        c_tilde = np.asarray(c_tilde, dtype=float)
        if c_tilde.shape != (network.n,):
            raise NetworkError(f"expected {network.n} support prices, got {c_tilde.shape}")
        if np.any(c_tilde[~network.controllable] != 0):
            raise NetworkError("support prices must be zero at non-controllable buses")
        return cls(c0_tilde, c_tilde)


def build_network(buses: Iterable[Bus], lines: Iterable[Line], v0: float = 1.0,
                  base_kva: float = 1000.0, name: str = "") -> RadialNetwork:
    """Validate a feeder and precompute children sets and a leaf-to-root order.

    Raises
    ------
    NetworkError
        On non-contiguous indices, cycles, disconnected buses, duplicate or
        missing lines, nonpositive resistance, or bus data violating the
        injection model.
    """
    buses = tuple(buses)
    lines = tuple(lines)
    if not buses:
        raise NetworkError("network has no buses")
    for pos, b in enumerate(buses):
        if b.id != pos:
            raise NetworkError(f"bus at position {pos} has id {b.id}; ids must be contiguous 0..N")
    root = buses[0]
    if root.parent is not None:
        raise NetworkError("bus 0 must be the root (no parent)")
    if root.kind != "substation":
        raise NetworkError("bus 0 must be of kind 'substation'")
    if not v0 > 0:
        raise NetworkError("v0 must be positive")

    n_bus = len(buses)
    parent = np.full(n_bus, -1, dtype=np.int64)
    for b in buses[1:]:
        _check_bus(b)
        if b.parent is None:
            raise NetworkError(f"bus {b.id}: disconnected (no parent)")
        if not 0 <= b.parent < n_bus:
            raise NetworkError(f"bus {b.id}: parent {b.parent} does not exist")
        if b.parent == b.id:
            raise NetworkError(f"bus {b.id}: cycle (bus is its own parent)")
        parent[b.id] = b.parent

    # Walk every bus up to the root; revisiting a bus on the current walk is a cycle.
    reaches_root = np.zeros(n_bus, dtype=bool)
    reaches_root[0] = True
    for start in range(1, n_bus):
        seen = []
        k = start
        while not reaches_root[k]:
            if k in seen:
                loop = seen[seen.index(k):]
                raise NetworkError(f"cycle detected through buses {loop}")
            seen.append(k)
            k = int(parent[k])
        reaches_root[seen] = True

    by_child: dict[int, Line] = {}
    for ln in lines:
        if not 1 <= ln.child < n_bus:
            raise NetworkError(f"line feeds unknown bus {ln.child}")
        if ln.child in by_child:
            raise NetworkError(f"duplicate line feeding bus {ln.child}")
        if not ln.r > 0:
            raise NetworkError(f"line {ln.child}: nonpositive resistance r={ln.r}")
        if not math.isfinite(ln.x):
            raise NetworkError(f"line {ln.child}: reactance must be finite")
        by_child[ln.child] = ln
    missing = sorted(set(range(1, n_bus)) - set(by_child))
    if missing:
        raise NetworkError(f"disconnected: buses {missing} have no feeding line")
    lines = tuple(by_child[k] for k in range(1, n_bus))

    children: list[list[int]] = [[] for _ in range(n_bus)]
    for k in range(1, n_bus):
        children[int(parent[k])].append(k)

    # Breadth-first from the root, reversed, puts every child ahead of its parent.
    bfs = [0]
    for k in bfs:
        bfs.extend(children[k])
    order = tuple(reversed(bfs))

    nb = buses[1:]
    v_min = np.array([b.v_min for b in nb])
    v_max = np.array([b.v_max for b in nb])
    arrays = dict(
        r=np.array([ln.r for ln in lines]),
        x=np.array([ln.x for ln in lines]),
        v_min=v_min,
        v_max=v_max,
        q_lo=np.array([b.q_g_min for b in nb]),
        q_hi=np.array([b.q_g_max for b in nb]),
    )
    for a in (*arrays.values(), parent):
        a.setflags(write=False)
    return RadialNetwork(
        buses=buses,
        lines=lines,
        v0=float(v0),
        base_kva=float(base_kva),
        parent=parent,
        children=tuple(tuple(c) for c in children),
        order=order,
        name=name,
        **arrays,
    )


def _check_bus(b: Bus) -> None:
    if b.kind not in BUS_KINDS or b.kind == "substation":
        raise NetworkError(f"bus {b.id}: invalid kind {b.kind!r} for a non-root bus")
    if b.p_c < 0 or b.q_c < 0 or b.p_g < 0:
        raise NetworkError(f"bus {b.id}: p_c, q_c and p_g must be nonnegative")
    if b.kind == "load" and (b.p_g != 0 or b.q_g_min != 0 or b.q_g_max != 0):
        raise NetworkError(f"bus {b.id}: load bus cannot generate")
    if b.q_g_max < 0 or b.q_g_min != -b.q_g_max:
        raise NetworkError(f"bus {b.id}: reactive bounds must be symmetric, q_g_max >= 0")
    if not 0 < b.v_min < b.v_max:
        raise NetworkError(f"bus {b.id}: need 0 < v_min < v_max")


def capability_bound(s: float, p_bar: float) -> float:
    """Reactive half-width ``sqrt(s^2 - p_bar^2)`` of an oversized inverter.

    >>> round(capability_bound(1.1, 1.0), 5)
    0.45826
    """
    if not p_bar > 0:
        raise ValueError("nameplate active capacity must be positive")
    if s < p_bar:
        raise ValueError(f"inverter rating s={s} is smaller than panel capacity {p_bar}")
    return math.sqrt(s * s - p_bar * p_bar)


def clamp_to_region(q_g, network: RadialNetwork) -> np.ndarray:
    """Project reactive setpoints onto the box ``[q_lo, q_hi]``."""
    q_g = np.asarray(q_g, dtype=float)
    if q_g.shape != (network.n,):
        raise ValueError(f"expected {network.n} setpoints, got shape {q_g.shape}")
    return np.minimum(np.maximum(q_g, network.q_lo), network.q_hi)


# -- feeder JSON ---------------------------------------------------------------

def network_to_dict(network: RadialNetwork) -> dict:
    buses = []
    for b in network.buses:
        buses.append({
            "id": b.id,
            "parent": b.parent,
            "kind": b.kind,
            "p_c": b.p_c,
            "q_c": b.q_c,
            "p_g": b.p_g,
            "q_g_max": b.q_g_max,
            "v_min": b.v_min,
            "v_max": b.v_max,
        })
    return {
        "name": network.name,
        "v0": network.v0,
        "base_kva": network.base_kva,
        "buses": buses,
        "lines": [{"child": ln.child, "r": ln.r, "x": ln.x} for ln in network.lines],
    }


def network_from_dict(data: dict) -> RadialNetwork:
    try:
        buses = []
        for raw in data["buses"]:
            q_max = float(raw.get("q_g_max", 0.0))
            buses.append(Bus(
                id=int(raw["id"]),
                parent=None if raw.get("parent") is None else int(raw["parent"]),
                kind=raw.get("kind", "load"),
                p_c=float(raw.get("p_c", 0.0)),
                q_c=float(raw.get("q_c", 0.0)),
                p_g=float(raw.get("p_g", 0.0)),
                q_g_min=-q_max if q_max else 0.0,
                q_g_max=q_max,
                v_min=float(raw.get("v_min", V_MIN_DEFAULT)),
                v_max=float(raw.get("v_max", V_MAX_DEFAULT)),
            ))
        lines = [Line(int(ln["child"]), float(ln["r"]), float(ln["x"])) for ln in data["lines"]]
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"malformed feeder document: {exc!r}") from exc
    return build_network(buses, lines, v0=float(data.get("v0", 1.0)),
                         base_kva=float(data.get("base_kva", 1000.0)),
                         name=str(data.get("name", "")))


def load_feeder(path: str | Path) -> RadialNetwork:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


def dump_feeder(network: RadialNetwork, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(network), fh, indent=2)
        fh.write("\n")


def fixture_path(name: str) -> Path:
    """Path of a feeder shipped with the package (``feeder6`` or ``feeder15``)."""
    p = Path(__file__).parent / "fixtures" / f"{name}.json"
    if not p.exists():
        raise FileNotFoundError(p)
    return p


def load_fixture(name: str) -> RadialNetwork:
    return load_feeder(fixture_path(name))
