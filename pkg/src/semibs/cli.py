"""Experiment driver: config parsing, dispatch, seeded trials, CSV reports.

Configs are flat INI files (section.key = value); unknown keys are rejected
and validation reports every violation at once.  Each run writes into its own
directory named by the config hash plus a timestamp.  All numeric CSV output
uses full 17-significant-digit decimals so files round-trip exactly.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .branch_poly import BranchingConfig, instability_report, price_branching
from .driver import ErfcDriver, ExactDriver, local_poly_from_erfc
from .market import MarketModel, black_scholes_model, derive_rng
from .payoffs import CashFlowSpec, PayoffSpec
from .pde_ref import FDGrid, bs_closed_form_put, early_exercise_premium, solve_american_fd, solve_european_fd
from .rand_driver import RandSchemeConfig, derive_rng_seed, price_curve_with_stats
from .surface import ValueSurface

_FMT = "%.17g"

_SCHEMA = {
    "model": {"r": float, "sigma": float, "d": int},
    "payoff": {"kind": str, "strike": float, "strike2": float},
    "method": {
        "name": str,
        "fine_steps": int,
        "update_every": int,
        "tau_mean": float,
        "eps_mean": float,
        "kappa": float,
        "spline_cells": int,
        "spline_y_max": float,
        "offspring_probs": str,
        "picard_iters": int,
        "time_periods": int,
        "particle_cap": int,
    },
    "grid": {"x_min": float, "x_max": float, "x_points": int, "n_space": int, "n_time": int},
    "run": {
        "paths": int,
        "trials": int,
        "seed": int,
        "maturity": float,
        "reference": str,
        "cap": float,
        "out_dir": str,
    },
}

_METHODS = ("fd", "branching", "randomized", "european-cf")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in problems))
        self.problems = problems


@dataclass
class ExperimentConfig:
    raw: dict            # {section: {key: str}}
    model: MarketModel
    payoff: PayoffSpec
    method: str
    params: dict
    seed: int
    trials: int
    paths: int
    maturity: float
    reference: str
    cap: float
    out_dir: str | None

    def hash(self) -> str:
        lines = sorted(
            f"{sec}.{key}={val.strip()}"
            for sec, kv in self.raw.items()
            for key, val in kv.items()
        )
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def _parse_ini(path) -> dict:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError([f"cannot read config file {path}"])
    return {sec: dict(parser.items(sec)) for sec in parser.sections()}


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse + validate a config file, collecting every violation."""
    raw = _parse_ini(path)
    if overrides:
        raw.setdefault("run", {}).update({k: str(v) for k, v in overrides.items()})
    problems: list[str] = []
    typed: dict = {}

    for sec, kv in raw.items():
        if sec not in _SCHEMA:
            problems.append(f"unknown section [{sec}]")
            continue
        typed[sec] = {}
        for key, val in kv.items():
            if key not in _SCHEMA[sec]:
                problems.append(f"unknown key {sec}.{key}")
                continue
            try:
                typed[sec][key] = _SCHEMA[sec][key](val)
            except ValueError:
                problems.append(f"{sec}.{key}={val!r} is not a valid {_SCHEMA[sec][key].__name__}")

    def need(sec, key, default=None):
        if sec in typed and key in typed[sec]:
            return typed[sec][key]
        if default is None:
            problems.append(f"missing required key {sec}.{key}")
        return default

    r = need("model", "r")
    sigma = need("model", "sigma")
    d = typed.get("model", {}).get("d", 1)
    if d != 1:
        problems.append("CLI experiments support d=1 only (use the API for d=2)")

    kind = need("payoff", "kind")
    strike = need("payoff", "strike")
    strike2 = typed.get("payoff", {}).get("strike2")
    method = need("method", "name")
    if method is not None and method not in _METHODS:
        problems.append(f"method.name must be one of {_METHODS}")

    seed = need("run", "seed", 0)
    paths = need("run", "paths", 1)
    trials = typed.get("run", {}).get("trials", 1)
    maturity = typed.get("run", {}).get("maturity", 1.0)
    reference = typed.get("run", {}).get("reference", "fd" if method in ("randomized",) else "none")
    cap = typed.get("run", {}).get("cap", 0.10)
    out_dir = typed.get("run", {}).get("out_dir")

    model = payoff = None
    if not problems:
        try:
            model = black_scholes_model(r, sigma)
        except ValueError as exc:
            problems.append(str(exc))
        try:
            payoff = PayoffSpec(kind, strike, strike2) if kind == "strangle" else PayoffSpec(kind, strike)
        except ValueError as exc:
            problems.append(str(exc))

    params = dict(typed.get("method", {}))
    params.pop("name", None)
    params.update(typed.get("grid", {}))
    if method == "randomized" and not problems:
        for key in ("fine_steps", "update_every", "tau_mean", "eps_mean", "x_min", "x_max", "x_points"):
            if key not in params:
                problems.append(f"randomized method needs method/grid key {key}")
    if method == "branching" and not problems:
        for key in ("kappa", "spline_cells", "time_periods", "x_min", "x_max", "x_points"):
            if key not in params:
                problems.append(f"branching method needs method/grid key {key}")
    if method == "fd" and not problems:
        for key in ("x_min", "x_max", "n_space", "n_time"):
            if key not in params:
                problems.append(f"fd method needs grid key {key}")
    if reference not in ("fd", "none"):
        problems.append("run.reference must be 'fd' or 'none'")

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        raw=raw, model=model, payoff=payoff, method=method, params=params,
        seed=seed, trials=trials, paths=paths, maturity=maturity,
        reference=reference, cap=cap, out_dir=out_dir,
    )


def bundled_config_path(name: str) -> Path:
    """Path of a packaged example config (e.g. 'put_k25_randomized')."""
    res = resources.files("semibs").joinpath("configs", f"{name}.ini")
    with resources.as_file(res) as p:
        return Path(p)


# ------------------------------------------------------------------ output


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(_FMT % v for v in row) + "\n")


def _fd_reference(cfg: ExperimentConfig) -> ValueSurface:
    lo = cfg.params.get("x_min", 5.0)
    hi = cfg.params.get("x_max", 50.0)
    grid = FDGrid(x_min=lo, x_max=hi, n_space=500, n_time=1000)
    return solve_american_fd(cfg.model, cfg.payoff, grid, cfg.maturity)


def _run_randomized(cfg: ExperimentConfig, out: Path) -> None:
    p = cfg.params
    scheme = RandSchemeConfig(
        fine_steps=p["fine_steps"],
        update_every=p["update_every"],
        space_grid=(np.linspace(p["x_min"], p["x_max"], p["x_points"]),),
        tau_mean=p["tau_mean"],
        eps_mean=p["eps_mean"],
        paths=cfg.paths,
        trials=cfg.trials,
    )
    cashflow = CashFlowSpec(cfg.payoff, cfg.model)
    ref = _fd_reference(cfg) if cfg.reference == "fd" else None
    report = price_curve_with_stats(
        cfg.model, cfg.payoff, cashflow, scheme, cfg.seed,
        maturity=cfg.maturity, reference=ref, cap=cfg.cap,
    )
    xs = report.nodes[:, 0]
    header = ["x"] + [name for name, _ in report.columns()]
    _write_csv(out / "price_curve.csv", header, [xs] + [c for _, c in report.columns()])
    _write_csv(out / "premium.csv", ["x", "premium_mean", "premium_std"],
               [xs, report.premium_mean, report.premium_std])
    tidx = np.repeat(np.arange(cfg.trials), xs.size)
    _write_csv(out / "trials.csv", ["trial", "x", "value", "premium"],
               [tidx.astype(float), np.tile(xs, cfg.trials),
                report.trial_values.ravel(), report.trial_premiums.ravel()])
    if ref is not None:
        ref.to_csv(out / "surface_reference.csv")
    (out / "runtime.txt").write_text(f"wall_clock_seconds={report.wall_clock:.3f}\n")


def _run_fd(cfg: ExperimentConfig, out: Path) -> None:
    p = cfg.params
    grid = FDGrid(x_min=p["x_min"], x_max=p["x_max"], n_space=p["n_space"], n_time=p["n_time"])
    t0 = time.perf_counter()
    am = solve_american_fd(cfg.model, cfg.payoff, grid, cfg.maturity)
    eu = solve_european_fd(cfg.model, cfg.payoff, grid, cfg.maturity)
    am.to_csv(out / "surface_american.csv")
    eu.to_csv(out / "surface_european.csv")
    prem = early_exercise_premium(am, eu)
    _write_csv(out / "premium.csv", ["x", "premium"], [am.xs, prem[0]])
    (out / "runtime.txt").write_text(f"wall_clock_seconds={time.perf_counter() - t0:.3f}\n")


def _run_branching(cfg: ExperimentConfig, out: Path) -> None:
    p = cfg.params
    model, payoff = cfg.model, cfg.payoff
    cashflow = CashFlowSpec(payoff, model)
    y_max = p.get("spline_y_max", payoff.strike * (1.0 - np.exp(-model.r * cfg.maturity)))
    drv = local_poly_from_erfc(
        ErfcDriver(ExactDriver(cashflow), kappa=p["kappa"]),
        domain=(0.0, y_max), cells=p["spline_cells"],
    )
    probs = tuple(
        float(s) for s in p.get("offspring_probs", "").split(",") if s.strip()
    ) or (1 / 3, 1 / 3, 1 / 3)
    bcfg = BranchingConfig(
        tau_mean=p.get("tau_mean", 0.6),
        offspring_probs=probs,
        picard_iters=p.get("picard_iters", 2),
        paths=cfg.paths,
        time_grid=np.linspace(0.0, cfg.maturity, p["time_periods"] + 1),
        space_grid=np.linspace(p["x_min"], p["x_max"], p["x_points"]),
        particle_cap=p.get("particle_cap", 10**6),
    )
    t0 = time.perf_counter()
    runs = [
        price_branching(model, payoff, drv, bcfg, seed=derive_rng_seed(cfg.seed, k),
                        maturity=cfg.maturity)
        for k in range(cfg.trials)
    ]
    xs = bcfg.space_grid
    t0_vals = np.array([s.values[0] for s in runs])
    mean = t0_vals.mean(axis=0)
    std = t0_vals.std(axis=0, ddof=1) if cfg.trials > 1 else np.zeros_like(mean)
    _write_csv(out / "price_curve.csv", ["x", "mean", "std"], [xs, mean, std])
    tidx = np.repeat(np.arange(cfg.trials), xs.size)
    _write_csv(out / "trials.csv", ["trial", "x", "value"],
               [tidx.astype(float), np.tile(xs, cfg.trials), t0_vals.ravel()])
    if cfg.trials >= 10:
        metrics = instability_report(runs, atm=payoff.strike)
        _write_csv(out / "instability.csv", ["x", "trial_std"], [xs, metrics.trial_std])
        (out / "instability_summary.txt").write_text(
            f"trials={metrics.trials}\n"
            f"atm_trial_std={_FMT % metrics.atm_std}\n"
            f"capped_fraction={_FMT % metrics.capped_fraction}\n"
            f"max_particles={metrics.max_particles}\n"
        )
    (out / "runtime.txt").write_text(f"wall_clock_seconds={time.perf_counter() - t0:.3f}\n")


def _run_european_cf(cfg: ExperimentConfig, out: Path) -> None:
    p = cfg.params
    xs = np.linspace(p.get("x_min", 5.0), p.get("x_max", 50.0), p.get("x_points", 40))
    vals = bs_closed_form_put(cfg.model, cfg.payoff.strike, cfg.maturity, xs)
    _write_csv(out / "price_curve.csv", ["x", "value"], [xs, vals])


def run(config_path, out_dir=None, validate_only=False, overrides=None) -> Path | None:
    """Execute one experiment config; returns the output directory."""
    cfg = load_config(config_path, overrides)
    if validate_only:
        return None
    base = Path(out_dir or cfg.out_dir or "runs")
    stamp = time.strftime("%Y%m%d-%H%M%S")
    out = base / f"{cfg.hash()[:12]}-{stamp}"
    out.mkdir(parents=True, exist_ok=False)
    (out / "config_echo.ini").write_text(
        "".join(
            f"[{sec}]\n" + "".join(f"{k} = {v}\n" for k, v in kv.items()) + "\n"
            for sec, kv in cfg.raw.items()
        )
    )
    (out / "config_hash.txt").write_text(cfg.hash() + "\n")
    dispatch = {
        "randomized": _run_randomized,
        "fd": _run_fd,
        "branching": _run_branching,
        "european-cf": _run_european_cf,
    }
    dispatch[cfg.method](cfg, out)
    return out


def compare(path_a, path_b, out_path, cap: float = 0.10) -> None:
    """Error statistics of surface B against surface A at t=0, on A's nodes."""
    a = ValueSurface.from_csv(path_a)
    b = ValueSurface.from_csv(path_b)
    xa, xb = a.xs, b.xs
    inside = (xa >= xb[0]) & (xa <= xb[-1])
    if not np.any(inside):
        raise ValueError("surfaces have disjoint space grids")
    xs = xa[inside]
    va = a.values[a.time_index(0.0)][inside]
    vb = np.interp(xs, xb, b.values[b.time_index(0.0)])
    abs_err = np.abs(vb - va)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_err = np.where(va != 0, abs_err / np.abs(va), np.inf)
    _write_csv(Path(out_path), ["x", "a", "b", "abs_err", "rel_err", "capped_err"],
               [xs, va, vb, abs_err, rel_err, np.minimum(rel_err, cap)])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="semibs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--validate-only", action="store_true")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--trials", type=int)
    p_run.add_argument("--out")

    p_cmp = sub.add_parser("compare", help="error statistics between two surface CSVs")
    p_cmp.add_argument("surface_a")
    p_cmp.add_argument("surface_b")
    p_cmp.add_argument("--out", default="compare.csv")
    p_cmp.add_argument("--cap", type=float, default=0.10)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            overrides = {}
            if args.seed is not None:
                overrides["seed"] = args.seed
            if args.trials is not None:
                overrides["trials"] = args.trials
            out = run(args.config, out_dir=args.out,
                      validate_only=args.validate_only, overrides=overrides)
            if out is not None:
                print(out)
        else:
            compare(args.surface_a, args.surface_b, args.out, cap=args.cap)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except Exception as exc:  # solver/argument errors: nonzero exit per contract
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
