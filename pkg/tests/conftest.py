import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hydro_ldr.fixtures import load_fixture
from hydro_ldr.scenario import InflowSpec, ScenarioSet
from hydro_ldr.system import Hydro, HydroSystem, Thermal

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def micro():
    return load_fixture("micro")


def two_thermal_system(demand=(100.0, 100.0), v0=50.0, v_f=20.0, discount_rate=0.0, **hydro_kw):
    hy = dict(name="H1", v_max=100.0, v_min=0.0, u_max=60.0, production_factor=1.0, v0=v0, v_f=v_f)
    hy.update(hydro_kw)
    return HydroSystem(
        hydros=(Hydro(**hy),),
        thermals=(Thermal("T5", 50.0, 58.0), Thermal("T6", 50.0, 86.0)),
        demand=np.asarray(demand, dtype=float), deficit_cost=1000.0, discount_rate=discount_rate,
    )


def constant_set(paths, n_history=1, history=None) -> ScenarioSet:
    """Scenario set from explicit (n, T, H) inflows with a flat history."""
    paths = np.asarray(paths, dtype=float)
    if paths.ndim == 2:
        paths = paths[:, :, None]
    H = paths.shape[2]
    hist = np.full((n_history, H), 30.0) if history is None else np.asarray(history, dtype=float)
    return ScenarioSet(inflows=paths, history=hist.reshape(n_history, H), seed=0)


@pytest.fixture
def flat_spec():
    return InflowSpec(monthly_mean=np.full((12, 1), 30.0), monthly_std=np.full((12, 1), 10.0))
