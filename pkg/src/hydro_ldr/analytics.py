"""Cost, sparsity and spot-price metrics, and the lambda sweep."""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .basis import BasisConfig
from .estimator import ZERO_TOL, EstimationError, LdrPolicy, adalasso_weights, fit, weighted_l1
from .lpcore import LpError
from .scenario import ScenarioSet
from .stt import SimulationResult, SttConfig, simulate
from .system import HydroSystem

DEFAULT_GRID = (0.0, 0.1, 1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6)


class SpotDataWarning(UserWarning):
    """Zero spot prices in a denominator position were skipped."""


def nearest_rank(values, p: float) -> float:
    """Nearest-rank percentile: the ceil(p * n)-th smallest value (1-based)."""
    x = np.sort(np.asarray(values, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("empty sample")
    # the tiny offset absorbs float noise such as 0.95 * 100 = 95.00000000000001
    rank = max(1, math.ceil(p * x.size - 1e-9))
    return float(x[min(rank, x.size) - 1])


def cost_metrics(costs) -> dict[str, float]:
    c = np.asarray(costs, dtype=float).ravel()
    if c.size == 0:
        raise ValueError("cost_metrics needs at least one value")
    p5, p95 = nearest_rank(c, 0.05), nearest_rank(c, 0.95)
    return {"mean": float(c.mean()), "P5": p5, "P95": p95, "spread": p95 - p5}


def sparsity_metrics(policy: LdrPolicy, theta0: LdrPolicy, zero_tol: float = ZERO_TOL) -> dict:
    if policy.theta.shape != theta0.theta.shape or not np.array_equal(policy.index, theta0.index):
        raise ValueError("policies do not share the coefficient index set")
    mask = policy.penalized
    th, th0 = policy.theta[mask], theta0.theta[mask]
    nz = np.abs(th) > zero_tol
    lags = policy.index[mask, 3]
    by_lag = {int(l): float(nz[lags == l].mean()) for l in np.unique(lags)}
    n0 = np.abs(th0).sum()
    shrink = 1.0 - np.abs(th).sum() / n0 if n0 > 0 else 0.0
    return {
        "nonzero_fraction": float(nz.mean()) if nz.size else 0.0,
        "nonzero_by_lag": by_lag,
        "l1_shrinkage": float(shrink),
    }


def central_window(horizon: int, length: int = 12) -> tuple[int, int]:
    """Centered 1-based inclusive stage range; 24 stages give (7, 18)."""
    length = min(length, horizon)
    start = (horizon - length) // 2 + 1
    return start, start + length - 1


def time_variability(spot: np.ndarray) -> tuple[float, int]:
    """Mean relative stage-to-stage change of spot paths (scenario, stage).

    Returns the value and the number of skipped terms with a zero previous
    price.
    """
    spot = np.atleast_2d(np.asarray(spot, dtype=float))
    n, Tw = spot.shape
    if Tw < 2:
        return 0.0, 0
    prev, cur = spot[:, :-1], spot[:, 1:]
    ok = prev != 0
    terms = np.zeros_like(prev)
    np.divide(np.abs(cur - prev), np.abs(prev), out=terms, where=ok)
    skipped = int((~ok).sum())
    return float(terms.sum() / n / (Tw - 1)), skipped


def spot_metrics(sim: SimulationResult | np.ndarray, window: tuple[int, int] | None = None,
                 bus: int = 0) -> dict:
    """Spot statistics over an inclusive 1-based stage window.

    ``sim`` may be a SimulationResult or a (scenario, stage) price matrix.
    """
    spot = sim.spot[:, :, bus] if isinstance(sim, SimulationResult) else np.asarray(sim, dtype=float)
    spot = np.atleast_2d(spot)
    T = spot.shape[1]
    lo, hi = window or central_window(T)
    if not 1 <= lo <= hi <= T:
        raise ValueError(f"window ({lo}, {hi}) outside 1..{T}")
    w = spot[:, lo - 1:hi]
    annual = w.mean(axis=1)
    per_stage = [nearest_rank(w[:, k], 0.95) - nearest_rank(w[:, k], 0.05) for k in range(w.shape[1])]
    tv, skipped = time_variability(w)
    if skipped:
        warnings.warn(f"{skipped} zero spot price(s) skipped in time variability", SpotDataWarning)
    return {
        "mean": float(annual.mean()),
        "P5": nearest_rank(annual, 0.05),
        "P95": nearest_rank(annual, 0.95),
        "avg_uncertainty": float(np.mean(per_stage)),
        "time_variability": tv,
        "skipped_terms": skipped,
        "window": [lo, hi],
    }


def select_lambda(lams, z_M, rtol: float = 0.0) -> int:
    """Index of the least lambda attaining the minimum z_M (optional relative tie tolerance)."""
    lams, z = np.asarray(lams, dtype=float), np.asarray(z_M, dtype=float)
    best = z.min()
    tied = np.flatnonzero(z <= best + rtol * abs(best))
    return int(tied[np.argmin(lams[tied])])


# ---------------------------------------------------------------------------
# Sweep

@dataclass
class SweepRow:
    lam: float
    in_sample_cost: float
    z_M: float
    P5: float
    P95: float
    nonzero_fraction: float
    l1_shrinkage: float
    weighted_l1: float = 0.0
    estimation_time: float = 0.0
    simulation_time: float = 0.0


@dataclass
class SweepReport:
    rows: list[SweepRow]
    selected_lambda: float
    gain: float
    policies: dict[float, LdrPolicy] = field(default_factory=dict, repr=False)
    simulations: dict[float, SimulationResult] = field(default_factory=dict, repr=False)

    @property
    def lambdas(self) -> list[float]:
        return [r.lam for r in self.rows]

    def row(self, lam: float) -> SweepRow:
        for r in self.rows:
            if r.lam == lam:
                return r
        raise KeyError(lam)

    def to_dict(self) -> dict:
        return {
            "selected_lambda": self.selected_lambda,
            "gain": self.gain,
            "rows": [{"lambda": r.lam, **{k: v for k, v in asdict(r).items() if k != "lam"},
                      "selected": r.lam == self.selected_lambda} for r in self.rows],
        }

    def save(self, directory: str | Path, stem: str = "sweep") -> tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        js, cs = d / f"{stem}.json", d / f"{stem}.csv"
        tmp = js.with_name(js.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        tmp.replace(js)
        cols = ["lambda", "in_sample_cost", "z_M", "P5", "P95", "nonzero_fraction", "l1_shrinkage",
                "weighted_l1", "gain_vs_0", "selected", "estimation_time", "simulation_time"]
        z0 = self.rows[0].z_M
        tmp = cs.with_name(cs.name + ".tmp")
        with tmp.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([repr(r.lam), repr(r.in_sample_cost), repr(r.z_M), repr(r.P5), repr(r.P95),
                            repr(r.nonzero_fraction), repr(r.l1_shrinkage), repr(r.weighted_l1),
                            repr((z0 - r.z_M) / z0 if z0 else 0.0), int(r.lam == self.selected_lambda),
                            f"{r.estimation_time:.3f}", f"{r.simulation_time:.3f}"])
        tmp.replace(cs)
        return js, cs


def report_from_rows(rows: list[SweepRow]) -> SweepReport:
    rows = sorted(rows, key=lambda r: r.lam)
    if not rows or rows[0].lam != 0.0:
        raise ValueError("sweep rows must include lambda = 0")
    k = select_lambda([r.lam for r in rows], [r.z_M for r in rows])
    z0 = rows[0].z_M
    gain = (z0 - rows[k].z_M) / z0 if z0 else 0.0
    return SweepReport(rows=rows, selected_lambda=rows[k].lam, gain=gain)


def _evaluate(system, scenarios_in, scenarios_out, basis, lam, weights, config, backend):
    try:
        t0 = time.perf_counter()
        res = fit(system, scenarios_in, basis, lam, weights, backend=backend)
        t1 = time.perf_counter()
        sim = simulate(system, res.policy, scenarios_out, config, backend=backend)
        t2 = time.perf_counter()
    except EstimationError as exc:
        exc.lam = lam
        raise
    except LpError as exc:
        raise LpError(f"lambda={lam:g}: {exc}") from exc
    return res.policy, sim, t1 - t0, t2 - t1


def sweep(system: HydroSystem, scenarios_in: ScenarioSet, scenarios_out: ScenarioSet,
          basis: BasisConfig, grid=DEFAULT_GRID, config: SttConfig = SttConfig(),
          backend: str | None = None, keep: bool = False, log=None, jobs: int = 1) -> SweepReport:
    """Estimate and simulate a policy per lambda and select the best out of sample.

    Lambda = 0 always runs first since its coefficients define the AdaLASSO
    weights; with ``jobs > 1`` the remaining lambdas run in worker processes.
    """
    grid = sorted({float(x) for x in grid})
    if not grid:
        raise ValueError("empty lambda grid")
    if grid[0] < 0:
        raise ValueError("lambda values must be >= 0")
    if grid[0] != 0.0:
        grid.insert(0, 0.0)
    common = (system, scenarios_in, scenarios_out, basis)
    theta0, sim0, te, ts = _evaluate(*common, 0.0, None, config, backend)
    weights = adalasso_weights(theta0)
    results = {0.0: (theta0, sim0, te, ts)}
    rows, policies, sims = [], {}, {}

    def record(lam, out):
        pol, sim, te, ts = out
        sp = sparsity_metrics(pol, theta0)
        cm = cost_metrics(sim.costs)
        row = SweepRow(lam, pol.in_sample_cost, sim.z_M, cm["P5"], cm["P95"], sp["nonzero_fraction"],
                       sp["l1_shrinkage"], weighted_l1(pol, weights), te, ts)
        rows.append(row)
        if log:
            log(row)
        if keep:
            policies[lam], sims[lam] = pol, sim

    record(0.0, results[0.0])
    rest = grid[1:]
    if jobs > 1 and len(rest) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(_evaluate, *common, lam, weights, config, backend) for lam in rest]
            for lam, fut in zip(rest, futs):
                record(lam, fut.result())
    else:
        for lam in rest:
            record(lam, _evaluate(*common, lam, weights, config, backend))
    rep = report_from_rows(rows)
    rep.policies, rep.simulations = policies, sims
    return rep
