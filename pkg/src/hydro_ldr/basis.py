"""Polynomial LDR basis: coefficient index set and feature vectors.

Lag ``l = 0`` is the current stage ``t`` and lag ``l`` is stage ``t - l``.
Within one (stage, reservoir) block the coefficient order is lexicographic
in (r, k, l): the intercept (r=1, k=0, l=0), own-inflow terms (r=1), the
complement-aggregate terms (r=2) and finally exogenous columns (r=3, k=1,
l=column).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .scenario import ScenarioSet, StandardizationStats


@dataclass(frozen=True)
class BasisConfig:
    max_degree: int = 1
    max_lag: int = 0
    include_complement: bool = True
    n_extra: int = 0

    def __post_init__(self):
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")
        if self.max_lag < 0:
            raise ValueError("max_lag must be >= 0")
        if self.n_extra < 0:
            raise ValueError("n_extra must be >= 0")

    def uses_complement(self, n_hydros: int) -> bool:
        return self.include_complement and n_hydros > 1

    def block_size(self, n_hydros: int) -> int:
        """Number of coefficients per (stage, reservoir)."""
        terms = self.max_degree * (self.max_lag + 1)
        return 1 + terms + (terms if self.uses_complement(n_hydros) else 0) + self.n_extra


class CoefficientIndex(NamedTuple):
    t: int  # stage, 1-based
    h: int  # reservoir, 1-based
    k: int
    l: int
    r: int


def block_layout(config: BasisConfig, n_hydros: int) -> np.ndarray:
    """(K, 3) array of (k, l, r) for one (t, h) block, in canonical order."""
    rows = [(0, 0, 1)]
    rows += [(k, l, 1) for k in range(1, config.max_degree + 1) for l in range(config.max_lag + 1)]
    if config.uses_complement(n_hydros):
        rows += [(k, l, 2) for k in range(1, config.max_degree + 1) for l in range(config.max_lag + 1)]
    rows += [(1, j, 3) for j in range(config.n_extra)]
    return np.array(rows, dtype=int)


def index_array(horizon: int, n_hydros: int, config: BasisConfig) -> np.ndarray:
    """Canonical coefficient order as an (P, 5) int array of (t, h, k, l, r)."""
    block = block_layout(config, n_hydros)
    t, h = np.meshgrid(np.arange(1, horizon + 1), np.arange(1, n_hydros + 1), indexing="ij")
    th = np.stack([t.ravel(), h.ravel()], axis=1)
    out = np.empty((len(th) * len(block), 5), dtype=int)
    out[:, :2] = np.repeat(th, len(block), axis=0)
    out[:, 2:] = np.tile(block, (len(th), 1))
    return out


def index_set(system, config: BasisConfig) -> list[CoefficientIndex]:
    return [CoefficientIndex(*map(int, row)) for row in index_array(system.horizon, system.n_hydros, config)]


def _powers(z: np.ndarray, max_degree: int) -> np.ndarray:
    """Stack z, z*z, ... along a new last-but-one axis by repeated multiplication."""
    out = np.empty((max_degree,) + z.shape)
    out[0] = z
    for k in range(1, max_degree):
        out[k] = out[k - 1] * z
    return out


def features(window: np.ndarray, stats: StandardizationStats, t: int, h: int,
             config: BasisConfig, extra: np.ndarray | None = None) -> np.ndarray:
    """Feature vector for stage ``t`` (1-based) and reservoir ``h`` (0-based).

    ``window`` holds inflows of all reservoirs for stages ``t - max_lag .. t``,
    oldest first, shape (max_lag + 1, H).
    """
    window = np.asarray(window, dtype=float)
    if window.ndim == 1:
        window = window[:, None]
    n_lags = config.max_lag + 1
    if window.shape[0] < n_lags:
        raise ValueError(f"window covers {window.shape[0]} stages, {n_lags} required")
    window = window[window.shape[0] - n_lags:]
    n_hydros = window.shape[1]
    rows = [stats.row(t - l) for l in range(n_lags)]  # lag order l = 0..max_lag
    own = window[::-1, h]
    z = (own - stats.mu[rows, h]) / stats.sigma[rows, h]
    parts = [np.ones(1), _powers(z, config.max_degree).ravel()]
    if config.uses_complement(n_hydros):
        comp = window[::-1].sum(axis=1) - own
        zc = (comp - stats.mu_c[rows, h]) / stats.sigma_c[rows, h]
        parts.append(_powers(zc, config.max_degree).ravel())
    if config.n_extra:
        if extra is None or len(extra) != config.n_extra:
            raise ValueError(f"expected {config.n_extra} extra feature values")
        parts.append(np.asarray(extra, dtype=float))
    return np.concatenate(parts)


def design_matrix(scenarios: ScenarioSet, stats: StandardizationStats, config: BasisConfig) -> np.ndarray:
    """Features for every (scenario, stage, reservoir): shape (n, T, H, K).

    Row ``[s, t-1, h]`` equals ``features`` evaluated on scenario ``s``'s
    window ending at stage ``t``.
    """
    tau = config.max_lag
    if scenarios.n_history < tau:
        raise ValueError(f"scenario history has {scenarios.n_history} stages, max_lag is {tau}")
    if config.n_extra and (scenarios.extra is None or scenarios.extra.shape[2] != config.n_extra):
        raise ValueError(f"scenario set must carry {config.n_extra} extra feature columns")
    n, T, H = scenarios.inflows.shape
    full = scenarios.full_inflows()
    base = scenarios.n_history
    stages = np.arange(1, T + 1)
    # lagged views: (n, T, H, L) with lag index last
    cols = np.stack([base + stages - 1 - l for l in range(tau + 1)], axis=1)  # (T, L)
    srows = np.stack([stats.offset + stages - 1 - l for l in range(tau + 1)], axis=1)
    if srows.min() < 0 or srows.max() >= stats.mu.shape[0]:
        raise ValueError("standardization stats do not cover the required lag stages")
    lagged = full[:, cols, :].transpose(0, 1, 3, 2)  # (n, T, H, L)
    mu = stats.mu[srows].transpose(0, 2, 1)  # (T, H, L)
    sd = stats.sigma[srows].transpose(0, 2, 1)
    z = (lagged - mu) / sd
    parts = [np.ones((n, T, H, 1))]
    pw = _powers(z, config.max_degree)  # (D, n, T, H, L)
    parts.append(pw.transpose(1, 2, 3, 0, 4).reshape(n, T, H, -1))
    if config.uses_complement(H):
        comp = full.sum(axis=2, keepdims=True) - full
        lagged_c = comp[:, cols, :].transpose(0, 1, 3, 2)
        zc = (lagged_c - stats.mu_c[srows].transpose(0, 2, 1)) / stats.sigma_c[srows].transpose(0, 2, 1)
        pw = _powers(zc, config.max_degree)
        parts.append(pw.transpose(1, 2, 3, 0, 4).reshape(n, T, H, -1))
    if config.n_extra:
        parts.append(np.broadcast_to(scenarios.extra[:, :, None, :], (n, T, H, config.n_extra)))
    return np.concatenate(parts, axis=3)
