"""Bundled case-study fixtures.

``case1`` (single reservoir, 36 stages) and ``case2`` (five-reservoir cascade,
24 stages) carry the published unit data; demand for case1 and the initial
and final storage for case2 are fixture conventions noted in each
``system.toml``. ``micro`` is a two-stage instance small enough for
brute-force oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..basis import BasisConfig
from ..runconfig import RunConfig, load_run_config
from ..scenario import InflowSpec, load_inflow_spec
from ..system import ConfigError, HydroSystem, load_system, validate_system

FIXTURE_DIR = Path(__file__).resolve().parent
NAMES = ("case1", "case2", "micro")


@dataclass(frozen=True)
class CaseFixture:
    name: str
    directory: Path
    system: HydroSystem
    inflows: InflowSpec
    run: RunConfig

    @property
    def basis(self) -> BasisConfig:
        return self.run.basis

    @property
    def lambda_grid(self) -> tuple[float, ...]:
        return self.run.lambda_grid

    @property
    def notes(self) -> dict:
        return self.run.notes

    @property
    def config_path(self) -> Path:
        return self.directory / "run.toml"


def fixture_path(name: str) -> Path:
    if name not in NAMES:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(NAMES)}")
    return FIXTURE_DIR / name


def load_fixture(name: str) -> CaseFixture:
    d = fixture_path(name)
    run = load_run_config(d / "run.toml")
    system = load_system(run.system)
    bad = validate_system(system)
    if bad:
        raise ConfigError(f"fixture {name}: " + "; ".join(v.message for v in bad))
    return CaseFixture(name, d, system, load_inflow_spec(run.scenarios), run)
