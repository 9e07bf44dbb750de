"""Policy implementation by state-target tracking and out-of-sample rollout.

At each stage a single-period LP dispatches the system while tracking the
storage target produced by the LDR; deviations ``e_plus``/``e_minus`` are
penalized by ``gamma`` but never counted as operating cost. Storage chains
from stage to stage, starting at ``v0``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .basis import features
from .estimator import LdrPolicy
from .lpcore import LpError, LpModel, Solver
from .scenario import ScenarioSet
from .system import HydroSystem, discount_factors


class SimulationError(LpError):
    def __init__(self, msg: str, scenario: int | None = None, stage: int | None = None):
        self.scenario, self.stage = scenario, stage
        where = f" at scenario {scenario}, stage {stage}" if scenario is not None else ""
        super().__init__(msg + where)


@dataclass(frozen=True)
class SttConfig:
    gamma: float | None = None  # None -> 10 * deficit_cost * max production factor
    apply_vf_at_T: bool = True
    spill_penalty: float = 0.0

    def resolved_gamma(self, system: HydroSystem) -> float:
        if self.gamma is not None:
            return float(self.gamma)
        pf = system.production_factor.max() if system.n_hydros else 1.0
        return 10.0 * system.deficit_cost * max(pf, 1e-12)

    def validate(self, system: HydroSystem) -> None:
        floor = system.deficit_cost * (system.production_factor.max() if system.n_hydros else 0.0)
        if not self.resolved_gamma(system) > floor:
            raise ValueError(f"gamma must exceed deficit_cost * max production factor = {floor:g}")
        if self.spill_penalty < 0:
            raise ValueError("spill_penalty must be nonnegative")


@dataclass
class StageDecision:
    g: np.ndarray
    u: np.ndarray
    s: np.ndarray
    f: np.ndarray
    delta: np.ndarray
    v: np.ndarray
    e_plus: np.ndarray
    e_minus: np.ndarray
    spot: np.ndarray  # energy-balance dual per bus, undiscounted
    stage_cost: float  # c'g + c_d * delta, undiscounted
    target: np.ndarray


class StageProblem:
    """Compiled single-stage tracking LP reused across stages and scenarios."""

    def __init__(self, system: HydroSystem, config: SttConfig = SttConfig(), backend: str | None = None):
        config.validate(system)
        self.system = system
        self.config = config
        J, H, B, L = system.n_thermals, system.n_hydros, system.n_buses, len(system.lines)
        gamma = config.resolved_gamma(system)
        m = LpModel("stt")
        g = m.add_variables("g", J, ub=system.thermal_capacity, cost=system.thermal_cost)
        u = m.add_variables("u", H, ub=system.u_max)
        s = m.add_variables("s", H, cost=config.spill_penalty)
        v = m.add_variables("v", H, lb=system.v_min, ub=system.v_max)
        delta = m.add_variables("delta", B, cost=system.deficit_cost)
        f = m.add_variables("f", L, lb=-system.line_capacity(), ub=system.line_capacity())
        ep = m.add_variables("e_plus", H, cost=gamma)
        em = m.add_variables("e_minus", H, cost=gamma)

        tmap = np.zeros((B, J))
        tmap[[system.bus_of(x) for x in system.thermals], np.arange(J)] = 1.0
        hmap = np.zeros((B, H))
        hmap[[system.bus_of(x) for x in system.hydros], np.arange(H)] = system.production_factor
        m.add_constraints("energy", [
            (np.broadcast_to(g, (B, J)), tmap),
            (np.broadcast_to(u, (B, H)), hmap),
            (delta, 1.0),
            (np.broadcast_to(f, (B, L)), system.line_incidence()),
        ], "==", np.zeros(B))
        M = system.topology_matrix()
        m.add_constraints("water", [(v, 1.0), (np.broadcast_to(u, (H, H)), M),
                                    (np.broadcast_to(s, (H, H)), M)], "==", np.zeros(H))
        m.add_constraints("track", [(v, 1.0), (ep, 1.0), (em, -1.0)], "==", np.zeros(H))
        self.lp = m.compile()
        self.solver = Solver(backend, "auto")
        self._rows = {k: b.slice() for k, b in self.lp.con_blocks.items()}
        self._v = self.lp.var_blocks["v"].slice()
        self._shares = system.load_shares()

    def solve(self, t: int, v_prev: np.ndarray, inflow: np.ndarray, target: np.ndarray) -> StageDecision:
        sysm = self.system
        rhs = self.lp.rhs.copy()
        rhs[self._rows["energy"]] = sysm.demand[t - 1] * self._shares
        rhs[self._rows["water"]] = v_prev + inflow
        rhs[self._rows["track"]] = target
        lp = replace(self.lp, rhs=rhs, row_lower=rhs, row_upper=rhs)
        if t == sysm.horizon and self.config.apply_vf_at_T:
            # capped at the storage reachable by holding all water, so the stage stays feasible
            lb = self.lp.col_lower.copy()
            lb[self._v] = np.maximum(sysm.v_min, np.minimum(sysm.v_f, v_prev + inflow))
            lp = replace(lp, col_lower=lb)
        sol = self.solver.solve(lp)
        if not sol.optimal:
            raise SimulationError(f"stage LP {sol.status} ({sol.message})")
        x = sol.value
        g, delta = x("g"), x("delta")
        return StageDecision(
            g=g, u=x("u"), s=x("s"), f=x("f"), delta=delta, v=x("v"),
            e_plus=x("e_plus"), e_minus=x("e_minus"), spot=sol.dual("energy").copy(),
            stage_cost=float(g @ sysm.thermal_cost + sysm.deficit_cost * delta.sum()),
            target=np.asarray(target, dtype=float),
        )


def stt_step(system: HydroSystem, policy: LdrPolicy, v_prev, window, t: int,
             config: SttConfig = SttConfig(), extra=None, problem: StageProblem | None = None,
             backend: str | None = None) -> StageDecision:
    """Implement stage ``t`` given the storage entering it and the inflow window.

    ``window`` holds inflows for stages ``t - max_lag .. t`` (oldest first),
    shape (max_lag + 1, H); its last row is the current stage's inflow.
    """
    window = np.asarray(window, dtype=float).reshape(-1, system.n_hydros)
    if window.shape[0] < policy.basis.max_lag + 1:
        raise ValueError(f"window covers {window.shape[0]} stages, {policy.basis.max_lag + 1} required")
    theta = policy.theta_blocks()[t - 1]
    target = np.array([features(window, policy.stats, t, h, policy.basis, extra) @ theta[h]
                       for h in range(system.n_hydros)])
    problem = problem or StageProblem(system, config, backend)
    return problem.solve(t, np.asarray(v_prev, dtype=float), window[-1], target)


_STAGE_FIELDS = ("g", "u", "s", "f", "delta", "v", "e_plus", "e_minus", "spot")


@dataclass
class SimulationResult:
    """Rollout arrays indexed (scenario, stage, ...)."""

    g: np.ndarray
    u: np.ndarray
    s: np.ndarray
    f: np.ndarray
    delta: np.ndarray
    v: np.ndarray
    e_plus: np.ndarray
    e_minus: np.ndarray
    spot: np.ndarray
    stage_cost: np.ndarray
    target: np.ndarray
    costs: np.ndarray  # discounted cost per scenario
    v0: np.ndarray
    inflows: np.ndarray

    @property
    def z_M(self) -> float:
        return float(np.mean(self.costs))

    @property
    def n_scenarios(self) -> int:
        return len(self.costs)

    def decision(self, s: int, t: int) -> StageDecision:
        """Decision at 0-based scenario ``s`` and 1-based stage ``t``."""
        k = t - 1
        return StageDecision(**{n: getattr(self, n)[s, k] for n in _STAGE_FIELDS},
                             stage_cost=float(self.stage_cost[s, k]), target=self.target[s, k])

    def v_prev(self) -> np.ndarray:
        start = np.broadcast_to(self.v0, (self.n_scenarios, 1, self.v.shape[2]))
        return np.concatenate([start, self.v[:, :-1]], axis=1)

    def water_residual(self, system: HydroSystem) -> np.ndarray:
        M = system.topology_matrix()
        lhs = self.v - self.v_prev() + (self.u + self.s) @ M.T
        return np.abs(lhs - self.inflows)

    def energy_residual(self, system: HydroSystem) -> np.ndarray:
        tmap = np.zeros((system.n_buses, system.n_thermals))
        tmap[[system.bus_of(x) for x in system.thermals], np.arange(system.n_thermals)] = 1.0
        hmap = np.zeros((system.n_buses, system.n_hydros))
        hmap[[system.bus_of(x) for x in system.hydros], np.arange(system.n_hydros)] = system.production_factor
        supply = self.g @ tmap.T + self.u @ hmap.T + self.delta + self.f @ system.line_incidence().T
        load = system.demand[None, :, None] * system.load_shares()[None, None, :]
        return np.abs(supply - load)


def simulate(system: HydroSystem, policy: LdrPolicy, scenarios: ScenarioSet,
             config: SttConfig = SttConfig(), backend: str | None = None,
             chunk: int = 256) -> SimulationResult:
    """Roll the policy forward over every scenario, stage by stage."""
    if scenarios.horizon != system.horizon or scenarios.n_reservoirs != system.n_hydros:
        raise ValueError("scenario set does not match the system")
    if scenarios.n_history < policy.basis.max_lag:
        raise ValueError("scenario history shorter than the policy's max_lag")
    problem = StageProblem(system, config, backend)
    n, T, H = scenarios.inflows.shape
    J, B, L = system.n_thermals, system.n_buses, len(system.lines)
    shapes = {"g": J, "u": H, "s": H, "f": L, "delta": B, "v": H, "e_plus": H, "e_minus": H, "spot": B}
    out = {k: np.zeros((n, T, d)) for k, d in shapes.items()}
    stage_cost = np.zeros((n, T))
    target = np.zeros((n, T, H))
    v0 = system.v0
    for lo in range(0, n, chunk):
        idx = np.arange(lo, min(n, lo + chunk))
        target[idx] = policy.targets(scenarios.subset(idx))
    for s in range(n):
        v = v0
        for t in range(1, T + 1):
            try:
                d = problem.solve(t, v, scenarios.inflows[s, t - 1], target[s, t - 1])
            except SimulationError as exc:
                raise SimulationError(str(exc), s + 1, t) from exc
            for k in shapes:
                out[k][s, t - 1] = getattr(d, k)
            stage_cost[s, t - 1] = d.stage_cost
            v = d.v
    costs = stage_cost @ discount_factors(system)
    return SimulationResult(**out, stage_cost=stage_cost, target=target, costs=costs,
                            v0=v0.copy(), inflows=scenarios.inflows.copy())


# ---------------------------------------------------------------------------
# Export

def _atomic_writer(path: Path):
    tmp = path.with_name(path.name + ".tmp")
    return tmp, tmp.open("w", newline="")


def save_summary_csv(sim: SimulationResult, path: str | Path) -> None:
    path = Path(path)
    tmp, fh = _atomic_writer(path)
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "discounted_cost"])
        for s, c in enumerate(sim.costs, start=1):
            w.writerow([s, repr(float(c))])
    tmp.replace(path)


def save_detail_csv(sim: SimulationResult, path: str | Path, variables=None) -> None:
    """Long format (scenario, stage, variable, value); vector variables get ``name[i]``."""
    path = Path(path)
    variables = variables or (*_STAGE_FIELDS, "stage_cost", "target")
    tmp, fh = _atomic_writer(path)
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "stage", "variable", "value"])
        n, T = sim.stage_cost.shape
        for s in range(n):
            for t in range(T):
                for name in variables:
                    arr = getattr(sim, name)[s, t]
                    if np.ndim(arr) == 0:
                        w.writerow([s + 1, t + 1, name, repr(float(arr))])
                    else:
                        for i, val in enumerate(arr, start=1):
                            w.writerow([s + 1, t + 1, f"{name}[{i}]", repr(float(val))])
    tmp.replace(path)


def load_spot_from_detail(path: str | Path, bus: int = 1) -> np.ndarray:
    """Read the (scenario, stage) spot-price matrix back from a detail CSV."""
    key = f"spot[{bus}]"
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for s, t, name, val in r:
            if name == key:
                rows.append((int(s), int(t), float(val)))
    if not rows:
        raise ValueError(f"{path}: no {key} rows")
    arr = np.array(rows)
    n, T = int(arr[:, 0].max()), int(arr[:, 1].max())
    out = np.full((n, T), np.nan)
    out[arr[:, 0].astype(int) - 1, arr[:, 1].astype(int) - 1] = arr[:, 2]
    return out
