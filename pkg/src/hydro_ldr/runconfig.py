"""Run configuration files (``run.toml``).

Relative input paths resolve against the directory of the config file; the
output directory ``out`` resolves against the working directory::

    [run]
    system = "system.toml"
    scenarios = "scenarios.toml"     # inflow spec; or give CSVs below
    in_sample_csv = "in.csv"         # optional, overrides generation
    out_of_sample_csv = "out.csv"    # optional
    n_in_sample = 100
    n_out_of_sample = 1000
    seed = 2023
    lambda_grid = [0.0, 1.0]
    out = "runs/case1"

    [basis]
    max_degree = 6
    max_lag = 11
    include_complement = false

    [stt]
    gamma = 1e5                      # optional
    central_window = [13, 24]
    apply_vf_at_T = true
    spill_penalty = 0.0
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .basis import BasisConfig
from .scenario import ScenarioSet, generate, load_inflow_spec, load_scenarios_csv
from .stt import SttConfig
from .system import ConfigError, HydroSystem, load_system, tomllib


@dataclass(frozen=True)
class RunConfig:
    system: Path
    scenarios: Path | None = None
    in_sample_csv: Path | None = None
    out_of_sample_csv: Path | None = None
    n_in_sample: int = 100
    n_out_of_sample: int = 1000
    seed: int = 0
    lambda_grid: tuple[float, ...] = (0.0,)
    basis: BasisConfig = BasisConfig()
    stt: SttConfig = SttConfig()
    central_window: tuple[int, int] | None = None
    out: Path = Path("runs")
    notes: dict = field(default_factory=dict)

    def validate(self) -> None:
        for label, p in (("system", self.system), ("scenarios", self.scenarios),
                         ("in_sample_csv", self.in_sample_csv), ("out_of_sample_csv", self.out_of_sample_csv)):
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"[run] {label}: file not found: {p}")
        if self.scenarios is None and (self.in_sample_csv is None or self.out_of_sample_csv is None):
            raise ConfigError("[run] needs 'scenarios' or both scenario CSV paths")
        if any(x < 0 for x in self.lambda_grid):
            raise ConfigError("[run] lambda_grid values must be >= 0")
        if self.n_in_sample < 1 or self.n_out_of_sample < 1:
            raise ConfigError("[run] scenario counts must be positive")

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def load_system(self) -> HydroSystem:
        return load_system(self.system)

    def in_sample(self, seed: int | None = None) -> ScenarioSet:
        if self.in_sample_csv is not None:
            return load_scenarios_csv(self.in_sample_csv)
        sysm = self.load_system()
        return generate(load_inflow_spec(self.scenarios), self.n_in_sample, sysm.horizon,
                        self.basis.max_lag, self.seed if seed is None else seed)

    def out_of_sample(self, seed: int | None = None) -> ScenarioSet:
        """Independent set drawn with ``seed + 1`` unless a CSV is configured."""
        if self.out_of_sample_csv is not None:
            return load_scenarios_csv(self.out_of_sample_csv)
        sysm = self.load_system()
        return generate(load_inflow_spec(self.scenarios), self.n_out_of_sample, sysm.horizon,
                        self.basis.max_lag, (self.seed if seed is None else seed) + 1)


def _path(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def run_config_from_dict(data: dict, base: Path = Path("."), where: str = "run config") -> RunConfig:
    run = data.get("run")
    if not isinstance(run, dict):
        raise ConfigError(f"{where}: [run] section missing")
    if "system" not in run:
        raise ConfigError(f"{where}: [run]: missing field system")
    try:
        b = data.get("basis", {})
        basis = BasisConfig(int(b.get("max_degree", 1)), int(b.get("max_lag", 0)),
                            bool(b.get("include_complement", True)), int(b.get("n_extra", 0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: [basis]: {exc}") from exc
    s = data.get("stt", {})
    try:
        stt = SttConfig(gamma=float(s["gamma"]) if "gamma" in s else None,
                        apply_vf_at_T=bool(s.get("apply_vf_at_T", True)),
                        spill_penalty=float(s.get("spill_penalty", 0.0)))
        window = tuple(int(x) for x in s["central_window"]) if "central_window" in s else None
        if window is not None and len(window) != 2:
            raise ValueError("central_window needs two stages")
        cfg = RunConfig(
            system=_path(base, run["system"]),
            scenarios=_path(base, run.get("scenarios")),
            in_sample_csv=_path(base, run.get("in_sample_csv")),
            out_of_sample_csv=_path(base, run.get("out_of_sample_csv")),
            n_in_sample=int(run.get("n_in_sample", 100)),
            n_out_of_sample=int(run.get("n_out_of_sample", 1000)),
            seed=int(run.get("seed", 0)),
            lambda_grid=tuple(float(x) for x in run.get("lambda_grid", (0.0,))),
            basis=basis, stt=stt, central_window=window,
            out=Path(run.get("out", "runs")),
            notes=dict(data.get("notes", {})),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: [stt]/[run]: {exc}") from exc
    cfg.validate()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return run_config_from_dict(data, path.parent, str(path))
