"""Command-line front end.

    hydro-ldr estimate --config run.toml --lambda 1e3
    hydro-ldr simulate --config run.toml --lambda 1e3        # or --policy theta.csv
    hydro-ldr sweep --config run.toml [--grid 0,10,1e3] [--jobs 2]
    hydro-ldr report --out runs/case1
    hydro-ldr gen-scenarios --config run.toml

``--config`` also accepts a bundled fixture name (case1, case2, micro).
Exit codes: 0 success, 2 configuration error, 3 LP failure, 4 I/O error.
The LP backend follows ``HYDRO_LDR_SOLVER`` (highs or scipy).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from . import __version__
from .analytics import cost_metrics, sparsity_metrics, spot_metrics, sweep
from .estimator import PolicyFileError, adalasso_weights, fit, load_policy, save_policy
from .lpcore import LpError
from .runconfig import RunConfig, load_run_config
from .scenario import save_scenarios_csv
from .stt import load_spot_from_detail, save_detail_csv, save_summary_csv, simulate
from .system import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_LP, EXIT_IO = 0, 2, 3, 4


class CliIOError(OSError):
    pass


def policy_name(lam: float) -> str:
    return f"theta_l{lam:g}.csv"


def _tag(lam: float) -> str:
    return f"l{lam:g}"


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _append_log(out: Path, record: dict) -> None:
    with (out / "estimation.jsonl").open("a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _resolve_config(arg: str) -> RunConfig:
    from .fixtures import NAMES, fixture_path

    path = fixture_path(arg) / "run.toml" if arg in NAMES else Path(arg)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return load_run_config(path)


def _config(args) -> tuple[RunConfig, Path]:
    cfg = _resolve_config(args.config).with_overrides(seed=args.seed)
    out = Path(args.out) if args.out else cfg.out
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _estimate(cfg: RunConfig, out: Path, lam: float, log=print):
    system, sc = cfg.load_system(), cfg.in_sample()
    weights = None
    if lam > 0:
        p0 = out / policy_name(0.0)
        if not p0.exists():
            log(f"no {p0.name} in {out}; estimating lambda=0 first")
            _estimate(cfg, out, 0.0, log)
        weights = adalasso_weights(load_policy(p0))
    res = fit(system, sc, cfg.basis, lam, weights)
    pol = res.policy
    path = out / policy_name(lam)
    save_policy(pol, path)
    info = {k: v for k, v in pol.info.items()}
    _append_log(out, {**info, "policy": path.name, "in_sample_cost": pol.in_sample_cost,
                      "n_in_sample": sc.n_scenarios, "seed": cfg.seed})
    log(f"lambda={lam:g}: {info['nonzero']}/{info['n_coefficients']} nonzero, "
        f"in-sample cost {pol.in_sample_cost:.6g}, {info['total_time']:.2f}s -> {path}")
    return pol


def cmd_estimate(args) -> int:
    cfg, out = _config(args)
    lam = 0.0 if args.lam is None else args.lam
    if lam < 0:
        raise ConfigError("--lambda must be >= 0")
    _estimate(cfg, out, lam)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg, out = _config(args)
    if args.policy:
        ppath = Path(args.policy)
    else:
        ppath = out / policy_name(0.0 if args.lam is None else args.lam)
    if not ppath.exists():
        raise CliIOError(f"policy file not found: {ppath}")
    pol = load_policy(ppath)
    system, sc = cfg.load_system(), cfg.out_of_sample()
    t0 = time.perf_counter()
    sim = simulate(system, pol, sc, cfg.stt)
    tag = _tag(pol.lam)
    save_summary_csv(sim, out / f"sim_{tag}_summary.csv")
    save_detail_csv(sim, out / f"sim_{tag}_detail.csv")
    print(f"lambda={pol.lam:g}: z_M={sim.z_M:.6g} over {sim.n_scenarios} scenarios "
          f"({time.perf_counter() - t0:.2f}s) -> sim_{tag}_summary.csv")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, out = _config(args)
    grid = args.grid if args.grid is not None else cfg.lambda_grid
    if any(x < 0 for x in grid):
        raise ConfigError("--grid values must be >= 0")
    system = cfg.load_system()
    sc_in, sc_out = cfg.in_sample(), cfg.out_of_sample()

    def log(r):
        print(f"lambda={r.lam:<8g} in-sample={r.in_sample_cost:.6g} z_M={r.z_M:.6g} "
              f"nonzero={r.nonzero_fraction:.3f}", flush=True)

    rep = sweep(system, sc_in, sc_out, cfg.basis, grid, cfg.stt, keep=True, log=log, jobs=args.jobs)
    for lam, pol in rep.policies.items():
        save_policy(pol, out / policy_name(lam))
        save_summary_csv(rep.simulations[lam], out / f"sim_{_tag(lam)}_summary.csv")
        _append_log(out, {**pol.info, "policy": policy_name(lam), "in_sample_cost": pol.in_sample_cost,
                          "n_in_sample": sc_in.n_scenarios, "seed": cfg.seed})
    for lam in {0.0, rep.selected_lambda}:
        save_detail_csv(rep.simulations[lam], out / f"sim_{_tag(lam)}_detail.csv", ("spot", "v", "stage_cost"))
    rep.save(out)
    print(f"selected lambda={rep.selected_lambda:g}, gain {100 * rep.gain:.2f}% -> {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_gen_scenarios(args) -> int:
    cfg, out = _config(args)
    save_scenarios_csv(cfg.in_sample(), out / "in_sample.csv")
    save_scenarios_csv(cfg.out_of_sample(), out / "out_of_sample.csv")
    print(f"wrote {out / 'in_sample.csv'} and {out / 'out_of_sample.csv'}")
    return EXIT_OK


def _read_summary(path: Path) -> list[float]:
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        if next(r, None) != ["scenario", "discounted_cost"]:
            raise CliIOError(f"{path}: unexpected header")
        return [float(row[1]) for row in r]


def _write_table(path: Path, cols: list[str], rows: list[dict]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    tmp.replace(path)


def build_report(run_dir: Path, window: tuple[int, int] | None = None) -> dict:
    """Cost, sparsity and spot tables from the policy and simulation files in ``run_dir``."""
    if not run_dir.is_dir():
        raise CliIOError(f"run directory not found: {run_dir}")
    policies = {}
    for p in sorted(run_dir.glob("theta_l*.csv")):
        pol = load_policy(p)
        policies[pol.lam] = pol
    if not policies:
        raise CliIOError(f"{run_dir}: no policy files (theta_l*.csv)")
    theta0 = policies.get(0.0)
    costs, sparsity, spot = [], [], []
    for lam in sorted(policies):
        pol = policies[lam]
        row = {"lambda": lam, "in_sample_cost": pol.in_sample_cost}
        if theta0 is not None:
            sp = sparsity_metrics(pol, theta0)
            sparsity.append({"lambda": lam, "nonzero_fraction": sp["nonzero_fraction"],
                             "l1_shrinkage": sp["l1_shrinkage"],
                             **{f"nonzero_lag{l}": v for l, v in sp["nonzero_by_lag"].items()}})
        summ = run_dir / f"sim_{_tag(lam)}_summary.csv"
        if summ.exists():
            cm = cost_metrics(_read_summary(summ))
            row.update({"mean": cm["mean"], "P5": cm["P5"], "P95": cm["P95"], "spread": cm["spread"]})
        costs.append(row)
        detail = run_dir / f"sim_{_tag(lam)}_detail.csv"
        if detail.exists():
            sm = spot_metrics(load_spot_from_detail(detail), window)
            spot.append({"lambda": lam, **{k: sm[k] for k in
                         ("mean", "P5", "P95", "avg_uncertainty", "time_variability", "skipped_terms")},
                         "window": f"{sm['window'][0]}-{sm['window'][1]}"})
    report = {"costs": costs, "sparsity": sparsity, "spot": spot}
    sw = run_dir / "sweep.json"
    if sw.exists():
        data = json.loads(sw.read_text())
        report["selected_lambda"] = data["selected_lambda"]
        report["gain"] = data["gain"]
    return report


def cmd_report(args) -> int:
    run_dir = Path(args.out) if args.out else _resolve_config(args.config).out
    window = None
    if args.config:
        window = _resolve_config(args.config).central_window
    rep = build_report(run_dir, window)
    _atomic_text(run_dir / "report.json", json.dumps(rep, indent=2, sort_keys=True) + "\n")
    for name, rows in (("costs", rep["costs"]), ("sparsity", rep["sparsity"]), ("spot", rep["spot"])):
        if rows:
            cols = list(dict.fromkeys(k for r in rows for k in r))
            for r in rows:
                for c in cols:
                    r.setdefault(c, "")
            _write_table(run_dir / f"report_{name}.csv", cols, rows)
    print(f"report for {len(rep['costs'])} policies -> {run_dir / 'report.json'}")
    return EXIT_OK


def _grid(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hydro-ldr", description="AdaLASSO linear decision rules for hydrothermal dispatch")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="run.toml path or fixture name")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default: [run].out)")
        return p

    p = common(sub.add_parser("estimate", help="estimate one policy"))
    p.add_argument("--lambda", dest="lam", type=float)
    p.set_defaults(func=cmd_estimate)
    p = common(sub.add_parser("simulate", help="simulate a policy out of sample"))
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--policy")
    p.set_defaults(func=cmd_simulate)
    p = common(sub.add_parser("sweep", help="lambda grid search"))
    p.add_argument("--grid", type=_grid)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    p = common(sub.add_parser("report", help="consolidate metrics of a run directory"), False)
    p.set_defaults(func=cmd_report)
    p = common(sub.add_parser("gen-scenarios", help="write in/out-of-sample scenario CSVs"))
    p.set_defaults(func=cmd_gen_scenarios)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report" and not (args.out or args.config):
        print("error: report needs --out or --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LpError as exc:
        print(f"LP failure: {exc}", file=sys.stderr)
        return EXIT_LP
    except (OSError, PolicyFileError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
