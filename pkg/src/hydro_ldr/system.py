"""Hydrothermal system data model, topology and file I/O.

Unit convention: volumes are abstract volume units per stage, power is
average MW over a stage, and one stage is one time unit. A hydro plant
turbining ``u`` volume units produces ``production_factor * u`` avgMW.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    """Malformed system, scenario or run configuration."""


@dataclass(frozen=True)
class Thermal:
    name: str
    capacity: float
    variable_cost: float
    bus: str | None = None


@dataclass(frozen=True)
class Hydro:
    name: str
    v_max: float
    v_min: float
    u_max: float
    production_factor: float
    v0: float
    v_f: float
    downstream: str | None = None
    bus: str | None = None


@dataclass(frozen=True)
class Bus:
    name: str
    load_share: float


@dataclass(frozen=True)
class Line:
    name: str
    from_bus: str
    to_bus: str
    capacity: float


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass(frozen=True)
class HydroSystem:
    """Immutable hydrothermal system.

    ``demand`` holds one value per stage. With no ``buses`` the network is a
    single bus and ``lines`` must be empty.
    """

    hydros: tuple[Hydro, ...]
    thermals: tuple[Thermal, ...]
    demand: np.ndarray
    deficit_cost: float
    discount_rate: float
    buses: tuple[Bus, ...] = ()
    lines: tuple[Line, ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "hydros", tuple(self.hydros))
        object.__setattr__(self, "thermals", tuple(self.thermals))
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        demand = np.array(self.demand, dtype=float).reshape(-1)
        demand.setflags(write=False)
        object.__setattr__(self, "demand", demand)

    @property
    def horizon(self) -> int:
        return len(self.demand)

    @property
    def n_hydros(self) -> int:
        return len(self.hydros)

    @property
    def n_thermals(self) -> int:
        return len(self.thermals)

    @property
    def n_buses(self) -> int:
        return max(1, len(self.buses))

    @property
    def alpha(self) -> float:
        return 1.0 + self.discount_rate

    def hydro_index(self, name: str) -> int:
        for i, h in enumerate(self.hydros):
            if h.name == name:
                return i
        raise KeyError(name)

    # Arrays used by the LP builders.
    @property
    def thermal_capacity(self) -> np.ndarray:
        return np.array([g.capacity for g in self.thermals], dtype=float)

    @property
    def thermal_cost(self) -> np.ndarray:
        return np.array([g.variable_cost for g in self.thermals], dtype=float)

    @property
    def production_factor(self) -> np.ndarray:
        return np.array([h.production_factor for h in self.hydros], dtype=float)

    @property
    def v_min(self) -> np.ndarray:
        return np.array([h.v_min for h in self.hydros], dtype=float)

    @property
    def v_max(self) -> np.ndarray:
        return np.array([h.v_max for h in self.hydros], dtype=float)

    @property
    def u_max(self) -> np.ndarray:
        return np.array([h.u_max for h in self.hydros], dtype=float)

    @property
    def v0(self) -> np.ndarray:
        return np.array([h.v0 for h in self.hydros], dtype=float)

    @property
    def v_f(self) -> np.ndarray:
        return np.array([h.v_f for h in self.hydros], dtype=float)

    def downstream_index(self) -> list[int | None]:
        names = {h.name: i for i, h in enumerate(self.hydros)}
        return [None if h.downstream is None else names.get(h.downstream, -1) for h in self.hydros]

    def topology_matrix(self) -> np.ndarray:
        """Signed river incidence ``M``: +1 on the diagonal, -1 at (down(h), h)."""
        n = self.n_hydros
        m = np.eye(n)
        for j, d in enumerate(self.downstream_index()):
            if d is not None and d >= 0:
                m[d, j] = -1.0
        return m

    def bus_names(self) -> list[str]:
        return [b.name for b in self.buses] if self.buses else ["system"]

    def bus_of(self, unit: Hydro | Thermal) -> int:
        if not self.buses:
            return 0
        names = self.bus_names()
        return names.index(unit.bus if unit.bus is not None else names[0])

    def load_shares(self) -> np.ndarray:
        if not self.buses:
            return np.ones(1)
        return np.array([b.load_share for b in self.buses], dtype=float)

    def line_incidence(self) -> np.ndarray:
        """Bus-by-line matrix ``A``; a positive flow leaves ``from_bus``."""
        names = self.bus_names()
        a = np.zeros((self.n_buses, len(self.lines)))
        for k, ln in enumerate(self.lines):
            a[names.index(ln.from_bus), k] -= 1.0
            a[names.index(ln.to_bus), k] += 1.0
        return a

    def line_capacity(self) -> np.ndarray:
        return np.array([ln.capacity for ln in self.lines], dtype=float)


def discount_factor(system: HydroSystem, t: int) -> float:
    """Return ``alpha**-t`` with ``alpha = 1 + discount_rate`` for stage ``t`` (1-based)."""
    if not 1 <= t <= system.horizon:
        raise IndexError(f"stage {t} outside 1..{system.horizon}")
    return system.alpha ** (-t)


def discount_factors(system: HydroSystem) -> np.ndarray:
    return system.alpha ** -np.arange(1, system.horizon + 1, dtype=float)


def _find_cycle(downstream: list[int | None]) -> list[int] | None:
    for start in range(len(downstream)):
        seen = []
        node: int | None = start
        while node is not None and node >= 0:
            if node in seen:
                return seen[seen.index(node):]
            seen.append(node)
            node = downstream[node]
    return None


def validate_system(system: HydroSystem) -> list[Violation]:
    """Return every structural violation found; an empty list means valid."""
    out: list[Violation] = []

    def bad(code, msg):
        out.append(Violation(code, msg))

    if system.horizon < 1:
        bad("horizon", "horizon must be at least 1 stage")
    if np.any(~np.isfinite(system.demand)) or np.any(system.demand < 0):
        bad("demand", "demand must be finite and nonnegative")
    if system.deficit_cost < 0:
        bad("deficit_cost", "deficit_cost must be nonnegative")
    if system.discount_rate <= -1:
        bad("discount_rate", "discount_rate must exceed -1")

    names = [h.name for h in system.hydros] + [g.name for g in system.thermals]
    dup = sorted({n for n in names if names.count(n) > 1})
    if dup:
        bad("duplicate_name", f"duplicate unit names: {dup}")

    for g in system.thermals:
        if g.capacity < 0:
            bad("thermal_capacity", f"{g.name}: capacity < 0")
        if g.variable_cost < 0:
            bad("thermal_cost", f"{g.name}: variable_cost < 0")

    for h in system.hydros:
        if not 0 <= h.v_min <= h.v0 <= h.v_max:
            bad("hydro_v0", f"{h.name}: need 0 <= v_min <= v0 <= v_max")
        if not h.v_min <= h.v_f <= h.v_max:
            bad("hydro_vf", f"{h.name}: need v_min <= v_f <= v_max")
        if h.u_max < 0:
            bad("hydro_u_max", f"{h.name}: u_max < 0")
        if h.production_factor < 0:
            bad("hydro_production_factor", f"{h.name}: production_factor < 0")

    down = system.downstream_index()
    for h, d in zip(system.hydros, down):
        if d == -1:
            bad("unknown_downstream", f"{h.name}: downstream {h.downstream!r} is not a hydro")
    cycle = _find_cycle(down)
    if cycle is not None:
        bad("cycle", "cycle detected: " + " -> ".join(system.hydros[i].name for i in cycle))

    if system.buses:
        shares = system.load_shares()
        if np.any(shares < 0) or not np.isclose(shares.sum(), 1.0):
            bad("load_share", "bus load shares must be nonnegative and sum to 1")
        bus_names = set(system.bus_names())
        for u in (*system.hydros, *system.thermals):
            if u.bus is not None and u.bus not in bus_names:
                bad("unknown_bus", f"{u.name}: bus {u.bus!r} not defined")
        for ln in system.lines:
            if ln.from_bus not in bus_names or ln.to_bus not in bus_names:
                bad("unknown_bus", f"line {ln.name}: endpoint not defined")
            if ln.capacity < 0:
                bad("line_capacity", f"line {ln.name}: capacity < 0")
    elif system.lines:
        bad("lines_without_buses", "lines require explicit buses")
    return out


# ---------------------------------------------------------------------------
# TOML I/O

_HYDRO_FIELDS = ("name", "v_max", "v_min", "u_max", "production_factor", "v0", "v_f")
_THERMAL_FIELDS = ("name", "capacity", "variable_cost")


def _require(table: dict, keys: Sequence[str], where: str) -> None:
    missing = [k for k in keys if k not in table]
    if missing:
        raise ConfigError(f"{where}: missing field(s) {', '.join(missing)}")


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def system_from_dict(data: dict) -> HydroSystem:
    if "system" not in data:
        raise ConfigError("[system]: section missing")
    sec = data["system"]
    _require(sec, ("horizon", "demand", "deficit_cost", "discount_rate"), "[system]")
    horizon = sec["horizon"]
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigError(f"[system]: horizon must be a positive integer, got {horizon!r}")
    demand = sec["demand"]
    if isinstance(demand, list):
        if len(demand) != horizon:
            raise ConfigError(f"[system]: demand has {len(demand)} values for horizon {horizon}")
        demand = [_number(d, "[system] demand") for d in demand]
    else:
        demand = [_number(demand, "[system] demand")] * horizon

    hydros = []
    raw_hydros = data.get("hydro", [])
    for i, h in enumerate(raw_hydros, start=1):
        where = f"[[hydro]] #{i}"
        _require(h, _HYDRO_FIELDS, where)
        down = h.get("downstream")
        if isinstance(down, int) and not isinstance(down, bool):
            if not 1 <= down <= len(raw_hydros):
                raise ConfigError(f"{where}: downstream index {down} out of range")
            down = raw_hydros[down - 1].get("name")
        elif down is not None and not isinstance(down, str):
            raise ConfigError(f"{where}: downstream must be a name or 1-based index")
        hydros.append(Hydro(
            name=str(h["name"]),
            **{k: _number(h[k], f"{where} {k}") for k in _HYDRO_FIELDS[1:]},
            downstream=down or None,
            bus=h.get("bus"),
        ))
    thermals = []
    for i, g in enumerate(data.get("thermal", []), start=1):
        where = f"[[thermal]] #{i}"
        _require(g, _THERMAL_FIELDS, where)
        thermals.append(Thermal(
            name=str(g["name"]),
            capacity=_number(g["capacity"], f"{where} capacity"),
            variable_cost=_number(g["variable_cost"], f"{where} variable_cost"),
            bus=g.get("bus"),
        ))
    buses = []
    for i, b in enumerate(data.get("bus", []), start=1):
        _require(b, ("name", "load_share"), f"[[bus]] #{i}")
        buses.append(Bus(str(b["name"]), _number(b["load_share"], f"[[bus]] #{i} load_share")))
    lines = []
    for i, ln in enumerate(data.get("line", []), start=1):
        _require(ln, ("name", "from_bus", "to_bus", "capacity"), f"[[line]] #{i}")
        lines.append(Line(str(ln["name"]), str(ln["from_bus"]), str(ln["to_bus"]),
                          _number(ln["capacity"], f"[[line]] #{i} capacity")))
    return HydroSystem(
        hydros=tuple(hydros),
        thermals=tuple(thermals),
        demand=np.array(demand),
        deficit_cost=_number(sec["deficit_cost"], "[system] deficit_cost"),
        discount_rate=_number(sec["discount_rate"], "[system] discount_rate"),
        buses=tuple(buses),
        lines=tuple(lines),
        name=str(sec.get("name", "")),
    )


def system_to_dict(system: HydroSystem) -> dict:
    demand = system.demand.tolist()
    sec: dict[str, Any] = {
        "horizon": system.horizon,
        "demand": demand[0] if len(set(demand)) == 1 else demand,
        "deficit_cost": system.deficit_cost,
        "discount_rate": system.discount_rate,
    }
    if system.name:
        sec["name"] = system.name
    out: dict[str, Any] = {"system": sec}
    out["hydro"] = []
    for h in system.hydros:
        row = {k: getattr(h, k) for k in _HYDRO_FIELDS}
        if h.downstream is not None:
            row["downstream"] = h.downstream
        if h.bus is not None:
            row["bus"] = h.bus
        out["hydro"].append(row)
    out["thermal"] = []
    for g in system.thermals:
        row = {k: getattr(g, k) for k in _THERMAL_FIELDS}
        if g.bus is not None:
            row["bus"] = g.bus
        out["thermal"].append(row)
    if system.buses:
        out["bus"] = [{"name": b.name, "load_share": b.load_share} for b in system.buses]
    if system.lines:
        out["line"] = [vars(ln).copy() for ln in system.lines]
    return out


def load_system(path: str | Path) -> HydroSystem:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return system_from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def dump_system(system: HydroSystem, path: str | Path) -> None:
    import tomli_w

    Path(path).write_text(tomli_w.dumps(system_to_dict(system)))
