"""Sample-average estimation of LDR coefficients, optionally AdaLASSO-regularized.

One LP couples every in-sample scenario: each stage's storage must equal
the basis features times the stage's coefficients, the dispatch per
scenario and stage is co-optimized, and for ``lam > 0`` a weighted l1
penalty on the non-intercept coefficients is added through epigraph
variables ``phi >= |theta|``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import BasisConfig, design_matrix, index_array
from .lpcore import CompiledLp, LpError, LpModel, LpSolution, Solver, diagnose_infeasibility
from .scenario import ScenarioSet, StandardizationStats, standardize_stats
from .system import HydroSystem, discount_factors

ZERO_TOL = 1e-6


class EstimationError(LpError):
    def __init__(self, status: str, rows: list[str], lam: float | None = None):
        self.status = status
        self.rows = rows
        self.lam = lam
        where = f" (lambda={lam:g})" if lam is not None else ""
        detail = f"; violated rows: {', '.join(rows)}" if rows else ""
        super().__init__(f"estimation LP {status}{where}{detail}")


@dataclass
class LdrPolicy:
    """Coefficients in canonical index order plus what is needed to apply them."""

    theta: np.ndarray
    stats: StandardizationStats
    basis: BasisConfig
    horizon: int
    n_hydros: int
    lam: float = 0.0
    in_sample_cost: float = math.nan
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if len(self.theta) != len(self.index):
            raise ValueError(f"theta has {len(self.theta)} entries, basis defines {len(self.index)}")

    @property
    def index(self) -> np.ndarray:
        return index_array(self.horizon, self.n_hydros, self.basis)

    @property
    def penalized(self) -> np.ndarray:
        """Mask of non-intercept coefficients."""
        return self.index[:, 2] >= 1

    def theta_blocks(self) -> np.ndarray:
        return self.theta.reshape(self.horizon, self.n_hydros, -1)

    def targets(self, scenarios: ScenarioSet) -> np.ndarray:
        """Storage targets for every (scenario, stage, reservoir)."""
        psi = design_matrix(scenarios, self.stats, self.basis)
        return np.einsum("nthk,thk->nth", psi, self.theta_blocks())

    def nonzero_count(self, tol: float = ZERO_TOL) -> int:
        return int(np.count_nonzero(np.abs(self.theta[self.penalized]) > tol))


@dataclass(frozen=True)
class AdalassoWeights:
    """Positive weights for the non-intercept coefficients, in canonical order."""

    w: np.ndarray

    def __post_init__(self):
        if np.any(~(np.asarray(self.w) > 0)):
            raise ValueError("AdaLASSO weights must be strictly positive")


def adalasso_weights(theta0: LdrPolicy, zero_tol: float = ZERO_TOL) -> AdalassoWeights:
    """Inverse absolute first-pass coefficients; (near-)zero entries get weight 1."""
    a = np.abs(theta0.theta[theta0.penalized])
    big = a > zero_tol
    return AdalassoWeights(np.where(big, 1.0 / np.where(big, a, 1.0), 1.0))


def weighted_l1(policy: LdrPolicy, weights: AdalassoWeights) -> float:
    return float(np.sum(weights.w * np.abs(policy.theta[policy.penalized])))


@dataclass
class EstimationResult:
    policy: LdrPolicy
    solution: LpSolution
    lp: CompiledLp
    scenario_costs: np.ndarray  # discounted operational cost per in-sample scenario

    def stage_values(self, name: str) -> np.ndarray:
        """Stage variables reshaped to (scenario, stage, ...)."""
        return np.moveaxis(self.solution.value(name), 0, 1)


def build_estimation_lp(system: HydroSystem, scenarios: ScenarioSet, basis: BasisConfig,
                        lam: float = 0.0, weights: AdalassoWeights | None = None,
                        stats: StandardizationStats | None = None) -> LpModel:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam > 0 and weights is None:
        raise ValueError("lambda > 0 requires AdaLASSO weights")
    if scenarios.horizon != system.horizon or scenarios.n_reservoirs != system.n_hydros:
        raise ValueError("scenario set does not match the system horizon/reservoirs")
    stats = stats if stats is not None else standardize_stats(scenarios)
    psi = design_matrix(scenarios, stats, basis)  # (N, T, H, K)
    N, T, H, K = psi.shape
    J, B, L = system.n_thermals, system.n_buses, len(system.lines)
    disc = discount_factors(system)

    lp = LpModel("ldr_estimation")
    tc = disc[:, None, None] * system.thermal_cost[None, None, :] / N
    g = lp.add_variables("g", (T, N, J), ub=system.thermal_capacity, cost=tc)
    u = lp.add_variables("u", (T, N, H), ub=system.u_max)
    s = lp.add_variables("s", (T, N, H))
    v = lp.add_variables("v", (T, N, H), lb=system.v_min, ub=system.v_max)
    delta = lp.add_variables("delta", (T, N, B), cost=(disc * system.deficit_cost / N)[:, None, None])
    if L:
        cap = system.line_capacity()
        f = lp.add_variables("f", (T, N, L), lb=-cap, ub=cap)
    theta = lp.add_variables("theta", (T, H, K), lb=-np.inf)

    # energy balance per (t, s, bus)
    tmap = np.zeros((B, J))
    tmap[[system.bus_of(x) for x in system.thermals], np.arange(J)] = 1.0
    hmap = np.zeros((B, H))
    hmap[[system.bus_of(x) for x in system.hydros], np.arange(H)] = system.production_factor
    terms = [
        (np.broadcast_to(g[:, :, None, :], (T, N, B, J)), tmap),
        (np.broadcast_to(u[:, :, None, :], (T, N, B, H)), hmap),
        (delta, 1.0),
    ]
    if L:
        terms.append((np.broadcast_to(f[:, :, None, :], (T, N, B, L)), system.line_incidence()))
    load = system.demand[:, None, None] * system.load_shares()[None, None, :]
    lp.add_constraints("energy", terms, "==", np.broadcast_to(load, (T, N, B)))

    # water balance: v_t - v_{t-1} + M (u + s) = inflow
    M = system.topology_matrix()
    xi = scenarios.inflows.transpose(1, 0, 2).copy()  # (T, N, H)
    xi[0] += system.v0
    terms = [
        (v, 1.0),
        (np.broadcast_to(u[:, :, None, :], (T, N, H, H)), M),
        (np.broadcast_to(s[:, :, None, :], (T, N, H, H)), M),
    ]
    prev = np.concatenate([v[:1], v[:-1]], axis=0)
    lp.add_constraints("water", terms + [(prev, np.where(np.arange(T) > 0, -1.0, 0.0)[:, None, None])], "==", xi)
    lp.add_constraints("final_storage", [(v[-1], 1.0)], ">=", np.broadcast_to(system.v_f, (N, H)))

    # LDR coupling: v = psi . theta
    th = np.broadcast_to(theta[:, None, :, :], (T, N, H, K))
    lp.add_constraints("ldr", [(v, 1.0), (th, -psi.transpose(1, 0, 2, 3))], "==", np.zeros((T, N, H)))

    if lam > 0:
        mask = index_array(T, H, basis)[:, 2] >= 1
        pen = theta.ravel()[mask]
        if len(weights.w) != len(pen):
            raise ValueError(f"{len(weights.w)} weights for {len(pen)} penalized coefficients")
        phi = lp.add_variables("phi", len(pen), cost=lam * weights.w)
        lp.add_constraints("epi_pos", [(phi, 1.0), (pen, -1.0)], ">=", np.zeros(len(pen)))
        lp.add_constraints("epi_neg", [(phi, 1.0), (pen, 1.0)], ">=", np.zeros(len(pen)))
    return lp


def scenario_costs(system: HydroSystem, g: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Discounted operational cost per scenario from (N, T, J) and (N, T, B) arrays."""
    disc = discount_factors(system)
    stage = g @ system.thermal_cost + system.deficit_cost * delta.sum(axis=-1)
    return stage @ disc


def _solve_or_raise(lp: CompiledLp, solver: Solver, lam: float, diagnose: bool) -> LpSolution:
    sol = solver.solve(lp)
    if not sol.optimal:
        rows = []
        if diagnose and sol.status == "infeasible":
            rows = diagnose_infeasibility(lp, solver.backend, method=solver.method)
        raise EstimationError(sol.status, rows, lam)
    return sol


def _screen_intercept_only(system, scenarios, basis, stats, lam, weights, solver, diagnose):
    """Solve with every non-intercept coefficient fixed at 0 and test optimality.

    The fixed solution is optimal for the penalized LP iff each fixed
    coefficient's reduced cost satisfies ``|z_i| <= lam * w_i`` (then epigraph
    duals with ``p_i - q_i = -z_i`` and ``p_i + q_i <= lam * w_i`` exist).
    """
    lp = build_estimation_lp(system, scenarios, basis, 0.0, None, stats).compile()
    mask = index_array(system.horizon, system.n_hydros, basis)[:, 2] >= 1
    lp = lp.with_bounds("theta", lb=np.where(mask, 0.0, -np.inf), ub=np.where(mask, 0.0, np.inf))
    sol = _solve_or_raise(lp, solver, lam, diagnose)
    z = np.abs(sol.z[lp.var_blocks["theta"].slice()][mask])
    lam_crit = float(np.max(z / weights.w)) if len(z) else 0.0
    return lp, sol, lam_crit


def fit(system: HydroSystem, scenarios: ScenarioSet, basis: BasisConfig, lam: float = 0.0,
        weights: AdalassoWeights | None = None, backend: str | None = None,
        diagnose: bool = True, method: str = "ipm", screen: bool = True) -> EstimationResult:
    """Build and solve the estimation LP, keeping the full LP solution.

    With ``screen`` and ``lam > 0`` the intercept-only restriction is solved
    first; when its reduced costs certify optimality for the penalized LP the
    full (badly scaled at large ``lam``) LP is skipped. The returned solution
    is optimal for the penalized problem in both paths.
    """
    if lam > 0 and weights is None:
        raise ValueError("lambda > 0 requires AdaLASSO weights")
    t0 = time.perf_counter()
    solver = Solver(backend, method)
    stats = standardize_stats(scenarios)
    screened, lam_crit = False, None
    if lam > 0 and screen:
        lp, sol, lam_crit = _screen_intercept_only(system, scenarios, basis, stats, lam, weights,
                                                   solver, diagnose)
        screened = lam >= lam_crit * (1.0 + 1e-9)
    t1 = time.perf_counter()
    if not screened:
        lp = build_estimation_lp(system, scenarios, basis, lam, weights, stats).compile()
        t1 = time.perf_counter()
        sol = _solve_or_raise(lp, solver, lam, diagnose)
    t2 = time.perf_counter()
    g = np.moveaxis(sol.value("g"), 0, 1)
    delta = np.moveaxis(sol.value("delta"), 0, 1)
    costs = scenario_costs(system, g, delta)
    policy = LdrPolicy(
        theta=sol.value("theta").ravel().copy(),
        stats=stats,
        basis=basis,
        horizon=system.horizon,
        n_hydros=system.n_hydros,
        lam=float(lam),
        in_sample_cost=float(costs.mean()),
    )
    penalty = float(lam * weighted_l1(policy, weights)) if lam > 0 else 0.0
    policy.info = {
        "lambda": float(lam),
        "build_time": t1 - t0,
        "solve_time": t2 - t1,
        "total_time": t2 - t0,
        "objective": policy.in_sample_cost + penalty,
        "operational_cost": policy.in_sample_cost,
        "penalty": penalty,
        "nonzero": policy.nonzero_count(),
        "n_coefficients": int(policy.penalized.sum()),
        "screened": screened,
        "lambda_critical": lam_crit,
        "backend": solver.backend,
    }
    return EstimationResult(policy, sol, lp, costs)


def estimate(system: HydroSystem, scenarios: ScenarioSet, basis: BasisConfig, lam: float = 0.0,
             weights: AdalassoWeights | None = None, backend: str | None = None) -> LdrPolicy:
    return fit(system, scenarios, basis, lam, weights, backend).policy


# ---------------------------------------------------------------------------
# Policy files

HEADER = ["t", "h", "k", "l", "r", "theta"]


class PolicyFileError(ValueError):
    pass


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_policy(policy: LdrPolicy, path: str | Path) -> None:
    """Write the coefficient CSV and a JSON sidecar with basis and statistics."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for row, val in zip(policy.index, policy.theta):
            w.writerow([*map(int, row), repr(float(val))])
    meta = {
        "horizon": policy.horizon,
        "n_hydros": policy.n_hydros,
        "basis": {
            "max_degree": policy.basis.max_degree,
            "max_lag": policy.basis.max_lag,
            "include_complement": policy.basis.include_complement,
            "n_extra": policy.basis.n_extra,
        },
        "lambda": policy.lam,
        "in_sample_cost": policy.in_sample_cost,
        "stats": policy.stats.to_dict(),
    }
    mtmp = _meta_path(path).with_name(_meta_path(path).name + ".tmp")
    mtmp.write_text(json.dumps(meta))
    tmp.replace(path)
    mtmp.replace(_meta_path(path))


def load_policy(path: str | Path) -> LdrPolicy:
    path = Path(path)
    meta_file = _meta_path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if not meta_file.exists():
        raise PolicyFileError(f"{path}: sidecar {meta_file.name} missing")
    try:
        meta = json.loads(meta_file.read_text())
        basis = BasisConfig(**meta["basis"])
        horizon, n_hydros = int(meta["horizon"]), int(meta["n_hydros"])
        stats = StandardizationStats.from_dict(meta["stats"])
    except (KeyError, TypeError, ValueError) as exc:
        raise PolicyFileError(f"{meta_file}: {exc}") from exc

    expected = index_array(horizon, n_hydros, basis)
    pos = {tuple(map(int, row)): i for i, row in enumerate(expected)}
    theta = np.full(len(expected), np.nan)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HEADER:
            raise PolicyFileError(f"{path}: header must be {','.join(HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                key = tuple(int(x) for x in row[:5])
                val = float(row[5])
            except (ValueError, IndexError) as exc:
                raise PolicyFileError(f"{path}:{lineno}: malformed row {row}") from exc
            if key not in pos:
                raise PolicyFileError(f"{path}:{lineno}: index {key} not in the declared basis")
            if not np.isnan(theta[pos[key]]):
                raise PolicyFileError(f"{path}:{lineno}: duplicate index (t,h,k,l,r)={key}")
            theta[pos[key]] = val
    missing = np.flatnonzero(np.isnan(theta))
    if len(missing):
        key = tuple(map(int, expected[missing[0]]))
        raise PolicyFileError(f"{path}: missing index (t,h,k,l,r)={key} ({len(missing)} missing)")
    return LdrPolicy(theta, stats, basis, horizon, n_hydros, float(meta["lambda"]),
                     float(meta["in_sample_cost"]))
