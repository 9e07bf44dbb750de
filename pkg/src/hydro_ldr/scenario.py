"""Synthetic inflow scenarios and the standardization statistics of the LDR basis.

The generator draws a periodic lognormal process: each stage maps to a calendar
month, the marginal of every (stage, reservoir) is lognormal with the given
natural-scale monthly mean and std, and the underlying Gaussian may follow a
stationary AR(1) in log space. With ``ar_coefficient == 0`` the process is
stagewise independent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .system import ConfigError, tomllib


@dataclass(frozen=True)
class InflowSpec:
    """Per-reservoir monthly lognormal targets.

    ``monthly_mean`` and ``monthly_std`` are (12, H). ``history`` optionally
    gives the most recent pre-horizon inflows per reservoir, oldest first,
    shape (L, H); when absent, the monthly means of the preceding months are
    used.
    """

    monthly_mean: np.ndarray
    monthly_std: np.ndarray
    ar_coefficient: float = 0.0
    start_month: int = 1
    history: np.ndarray | None = None
    names: tuple[str, ...] = ()

    def __post_init__(self):
        mean = np.atleast_2d(np.asarray(self.monthly_mean, dtype=float))
        std = np.atleast_2d(np.asarray(self.monthly_std, dtype=float))
        if mean.shape[0] != 12 and mean.shape[1] == 12:
            mean, std = mean.T, std.T
        object.__setattr__(self, "monthly_mean", mean)
        object.__setattr__(self, "monthly_std", std)
        if self.history is not None:
            hist = np.asarray(self.history, dtype=float)
            object.__setattr__(self, "history", hist.reshape(len(hist), -1))

    @property
    def n_reservoirs(self) -> int:
        return self.monthly_mean.shape[1]

    def validate(self) -> None:
        if self.monthly_mean.shape != (12, self.n_reservoirs) or self.monthly_std.shape != self.monthly_mean.shape:
            raise ValueError("monthly_mean and monthly_std must both be (12, n_reservoirs)")
        if np.any(self.monthly_mean < 0) or np.any(self.monthly_std < 0):
            raise ValueError("monthly means and stds must be nonnegative")
        if np.any((self.monthly_mean == 0) & (self.monthly_std > 0)):
            raise ValueError("a zero monthly mean requires a zero std")
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise ValueError("ar_coefficient must lie in [0, 1)")
        if not 1 <= self.start_month <= 12:
            raise ValueError("start_month must lie in 1..12")
        if self.history is not None:
            if self.history.shape[1] != self.n_reservoirs:
                raise ValueError("history must have one column per reservoir")
            if np.any(self.history < 0):
                raise ValueError("history inflows must be nonnegative")

    def month_of(self, stage: np.ndarray | int) -> np.ndarray:
        """0-based calendar month of 1-based stages (stages <= 0 are pre-horizon)."""
        return (np.asarray(stage) - 1 + self.start_month - 1) % 12

    def history_values(self, n_lags: int) -> np.ndarray:
        if n_lags == 0:
            return np.zeros((0, self.n_reservoirs))
        if self.history is None:
            return self.monthly_mean[self.month_of(np.arange(1 - n_lags, 1))]
        if len(self.history) < n_lags:
            raise ValueError(f"history has {len(self.history)} stages, {n_lags} required")
        return self.history[len(self.history) - n_lags:]


@dataclass(frozen=True)
class ScenarioSet:
    """Equiprobable inflow paths.

    ``inflows`` is (n_scenarios, horizon, n_reservoirs); ``history`` is
    (n_history, n_reservoirs), shared by all scenarios, oldest first, so that
    ``history[-1]`` is stage 0. ``extra`` holds optional exogenous feature
    columns (n_scenarios, horizon, n_extra).
    """

    inflows: np.ndarray
    history: np.ndarray
    seed: int | None = None
    extra: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.inflows, dtype=float)
        if x.ndim != 3:
            raise ValueError("inflows must be (scenario, stage, reservoir)")
        hist = np.asarray(self.history, dtype=float).reshape(-1, x.shape[2])
        if np.any(x < 0) or np.any(hist < 0):
            raise ValueError("inflows must be nonnegative")
        object.__setattr__(self, "inflows", x)
        object.__setattr__(self, "history", hist)
        if self.extra is not None:
            e = np.asarray(self.extra, dtype=float)
            if e.ndim != 3 or e.shape[:2] != x.shape[:2]:
                raise ValueError("extra must be (scenario, stage, column)")
            object.__setattr__(self, "extra", e)

    @property
    def n_scenarios(self) -> int:
        return self.inflows.shape[0]

    @property
    def horizon(self) -> int:
        return self.inflows.shape[1]

    @property
    def n_reservoirs(self) -> int:
        return self.inflows.shape[2]

    @property
    def n_history(self) -> int:
        return self.history.shape[0]

    @property
    def probabilities(self) -> np.ndarray:
        return np.full(self.n_scenarios, 1.0 / self.n_scenarios)

    def full_inflows(self) -> np.ndarray:
        """History prepended to every scenario: (n, n_history + horizon, H)."""
        hist = np.broadcast_to(self.history, (self.n_scenarios, *self.history.shape))
        return np.concatenate([hist, self.inflows], axis=1)

    def subset(self, idx) -> "ScenarioSet":
        idx = np.atleast_1d(idx)
        extra = None if self.extra is None else self.extra[idx]
        return ScenarioSet(self.inflows[idx], self.history, self.seed, extra)


def _lognormal_params(mean: np.ndarray, std: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = np.log1p(np.where(mean > 0, (std / np.where(mean > 0, mean, 1.0)) ** 2, 0.0))
        mu = np.log(np.where(mean > 0, mean, 1.0)) - 0.5 * s2
    return mu, np.sqrt(s2)


def generate(spec: InflowSpec, n: int, horizon: int, max_lag: int, seed: int) -> ScenarioSet:
    """Draw ``n`` inflow scenarios over ``horizon`` stages.

    The draw uses a counter-based Philox stream keyed by ``seed`` so a given
    seed always yields the same set. ``max_lag`` fixes the length of the
    shared pre-horizon history.
    """
    spec.validate()
    if n < 1 or horizon < 1 or max_lag < 0:
        raise ValueError("need n >= 1, horizon >= 1, max_lag >= 0")
    n_res = spec.n_reservoirs
    months = spec.month_of(np.arange(1, horizon + 1))
    mean = spec.monthly_mean[months]  # (T, H)
    std = spec.monthly_std[months]
    mu, sig = _lognormal_params(mean, std)

    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    eps = rng.standard_normal((n, horizon, n_res))
    phi = spec.ar_coefficient
    if phi > 0:
        z = np.empty_like(eps)
        z[:, 0] = eps[:, 0]
        scale = np.sqrt(1.0 - phi * phi)
        for t in range(1, horizon):
            z[:, t] = phi * z[:, t - 1] + scale * eps[:, t]
    else:
        z = eps
    x = np.exp(mu + sig * z)
    x = np.where(std > 0, x, mean)  # degenerate months reproduce the mean exactly
    return ScenarioSet(x, spec.history_values(max_lag), seed=int(seed))


def complement_aggregate(scenarios: ScenarioSet, h: int) -> np.ndarray:
    """Sum of inflows of every reservoir other than ``h`` (0-based), shape (n, T)."""
    if scenarios.n_reservoirs < 2:
        raise ValueError("complement aggregate needs at least two reservoirs")
    x = scenarios.inflows
    return x.sum(axis=2) - x[:, :, h]


@dataclass(frozen=True)
class StandardizationStats:
    """Per-stage, per-reservoir mean and population std, own and complement.

    Rows cover stages ``1 - offset .. horizon``; row ``offset + t - 1`` is
    stage ``t``. Zero standard deviations are stored as 1.
    """

    mu: np.ndarray
    sigma: np.ndarray
    mu_c: np.ndarray
    sigma_c: np.ndarray
    offset: int

    def row(self, stage: int) -> int:
        r = self.offset + stage - 1
        if not 0 <= r < self.mu.shape[0]:
            raise IndexError(f"stage {stage} not covered by stats")
        return r

    def to_dict(self) -> dict:
        return {
            "offset": self.offset,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "mu_c": self.mu_c.tolist(),
            "sigma_c": self.sigma_c.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("mu", "sigma", "mu_c", "sigma_c")),
                   offset=int(d["offset"]))

    def __eq__(self, other):
        if not isinstance(other, StandardizationStats):
            return NotImplemented
        return self.offset == other.offset and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("mu", "sigma", "mu_c", "sigma_c"))


def _mean_std(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = a.mean(axis=0)
    sd = a.std(axis=0)  # population (ddof=0)
    return mu, np.where(sd > 0, sd, 1.0)


def standardize_stats(scenarios: ScenarioSet) -> StandardizationStats:
    full = scenarios.full_inflows()
    mu, sigma = _mean_std(full)
    comp = full.sum(axis=2, keepdims=True) - full
    mu_c, sigma_c = _mean_std(comp)
    return StandardizationStats(mu, sigma, mu_c, sigma_c, offset=scenarios.n_history)


# ---------------------------------------------------------------------------
# Files

def load_inflow_spec(path: str | Path) -> InflowSpec:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return inflow_spec_from_dict(data, where=str(path))


def inflow_spec_from_dict(data: dict, where: str = "scenario spec") -> InflowSpec:
    sec = data.get("scenarios", {})
    res = data.get("reservoir", [])
    if not res:
        raise ConfigError(f"{where}: [[reservoir]] section missing")
    means, stds, hist, names = [], [], [], []
    for i, r in enumerate(res, start=1):
        for key in ("monthly_mean", "monthly_std"):
            if key not in r:
                raise ConfigError(f"{where}: [[reservoir]] #{i}: missing field {key}")
            if len(r[key]) != 12:
                raise ConfigError(f"{where}: [[reservoir]] #{i}: {key} needs 12 values")
        means.append(r["monthly_mean"])
        stds.append(r["monthly_std"])
        names.append(str(r.get("name", f"H{i}")))
        if "history" in r:
            hist.append(r["history"])
    if hist and len(hist) != len(res):
        raise ConfigError(f"{where}: history must be given for every reservoir or none")
    if hist and len({len(h) for h in hist}) != 1:
        raise ConfigError(f"{where}: history lengths differ across reservoirs")
    spec = InflowSpec(
        monthly_mean=np.array(means, dtype=float).T,
        monthly_std=np.array(stds, dtype=float).T,
        ar_coefficient=float(sec.get("ar_coefficient", 0.0)),
        start_month=int(sec.get("start_month", 1)),
        history=np.array(hist, dtype=float).T if hist else None,
        names=tuple(names),
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return spec


def save_scenarios_csv(scenarios: ScenarioSet, path: str | Path) -> None:
    """Write (scenario, stage, reservoir, inflow) rows, 1-based.

    History rows carry stages ``<= 0`` and are repeated for each scenario.
    """
    path = Path(path)
    full = scenarios.full_inflows()
    stages = np.arange(1 - scenarios.n_history, scenarios.horizon + 1)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "stage", "reservoir", "inflow"])
        for s in range(scenarios.n_scenarios):
            for ti, t in enumerate(stages):
                for h in range(scenarios.n_reservoirs):
                    w.writerow([s + 1, int(t), h + 1, repr(float(full[s, ti, h]))])
    tmp.replace(path)


def load_scenarios_csv(path: str | Path) -> ScenarioSet:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    try:
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if header != ["scenario", "stage", "reservoir", "inflow"]:
        raise ConfigError(f"{path}: header must be scenario,stage,reservoir,inflow")
    s = raw[:, 0].astype(int)
    t = raw[:, 1].astype(int)
    h = raw[:, 2].astype(int)
    n, n_res = s.max(), h.max()
    t_min, t_max = t.min(), t.max()
    n_hist = max(0, 1 - t_min)
    full = np.full((n, n_hist + t_max, n_res), np.nan)
    full[s - 1, t - 1 + n_hist, h - 1] = raw[:, 3]
    if np.isnan(full).any() or len(raw) != full.size:
        raise ConfigError(f"{path}: scenario grid is incomplete or has duplicate rows")
    hist = full[:, :n_hist]
    if n_hist and not np.all(hist == hist[0]):
        raise ConfigError(f"{path}: pre-horizon history must be identical across scenarios")
    return ScenarioSet(full[:, n_hist:], full[0, :n_hist])
