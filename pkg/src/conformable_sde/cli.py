"""Command-line front end.

Each subcommand reads a YAML experiment description, runs it, and writes CSV
data plus ``summary.json`` (checks, fitted values, resolved config and a
reproducibility stanza) into the output directory.

Exit status: 0 all checks pass, 1 a check failed, 2 config error,
3 precondition or I/O failure.
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from conformable_sde import __version__
from conformable_sde._io import atomic_write_text, write_csv, write_json
from conformable_sde.blowup import (
    blowup_subcritical_transform,
    blowup_time_critical,
    blowup_time_supercritical,
    detect_moment_explosion,
    integrate_moment_ode,
    integrate_moment_ode_critical,
    moment_closed_form,
    moment_closed_form_critical,
    subcritical_bracket,
)
from conformable_sde.calculus import Regime, gronwall_bound, solve_conformable_ivp
from conformable_sde.config import ConfigError, ExperimentConfig, validate_config
from conformable_sde.moments import (
    estimate_second_moment,
    fit_growth_in_lambda,
    fit_growth_in_t,
)
from conformable_sde.paths import (
    SigmaKind,
    exact_linear_second_moment,
    picard_contraction_demo,
    simulate_ensemble,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3

SUBCOMMANDS = ("simulate", "moments", "growth-t", "growth-lambda", "blowup", "contraction", "gronwall-check")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "detail": self.detail}


def _sandwich_checks(cfg: ExperimentConfig, ens, series, n_se: float) -> list[Check]:
    sim, sigma = cfg.simulation, cfg.sigma
    checks = [Check("initial_moment_exact", series.m2[0] == sim.u0**2, f"m2[0]={series.m2[0]!r}")]
    if sim.alpha.regime() is not Regime.SUPERCRITICAL:
        return checks
    if sigma.kind is SigmaKind.CUSTOM and sigma.lower == 0 and sigma.label == "zero":
        dev = float(np.max(np.abs(series.m2 - sim.u0**2)))
        checks.append(Check("constant_moment", dev <= 1e-12 * max(1.0, sim.u0**2), f"max deviation {dev:.3g}"))
    if not series.censored.any():
        vals = ens.data
        mean = vals.mean(axis=1)
        se = vals.std(axis=1, ddof=1) / math.sqrt(ens.n_paths) if ens.n_paths > 1 else np.full(len(mean), np.inf)
        z = np.abs(mean - sim.u0)[1:] / np.where(se[1:] > 0, se[1:], np.inf)
        z = np.where(np.abs(mean - sim.u0)[1:] == 0, 0.0, z)
        checks.append(Check("martingale_mean", bool(np.all(z <= 4.0)), f"max |mean-u0|/se = {np.max(z):.3f}"))
    if math.isfinite(sigma.lip) and sigma.lower > 0 and sim.u0 > 0:
        tau = (series.grid - sim.a) ** sim.alpha.p
        p = sim.alpha.p
        lo = sim.u0**2 * np.exp(sim.lam**2 * sigma.lower**2 * tau / p)
        hi = sim.u0**2 * np.exp(sim.lam**2 * sigma.lip**2 * tau / p)
        band = n_se * series.stderr
        ok_lo = series.m2 >= lo - band
        ok_hi = series.m2 <= hi + band
        name = "linear_exactness" if sigma.kind is SigmaKind.LINEAR else "moment_sandwich"
        worst = float(np.max(np.maximum(lo - series.m2, series.m2 - hi) / np.where(series.stderr > 0, series.stderr, np.inf)))
        checks.append(Check(name, bool(np.all(ok_lo & ok_hi)), f"worst excursion {worst:.3f} stderr (limit {n_se:g})"))
    return checks


def _run_simulate(cfg, out, threads):
    ens = simulate_ensemble(cfg.simulation, cfg.sigma, threads)
    series = estimate_second_moment(ens, cfg.sigma)
    files = []
    if cfg.extra["dump_format"] == "npz":
        ens.to_npz(out / "ensemble.npz")
        files.append("ensemble.npz")
    else:
        ens.to_csv(out / "ensemble.csv")
        files.append("ensemble.csv")
    series.to_csv(out / "moments.csv")
    files.append("moments.csv")
    checks = [Check("initial_values", bool(np.all(ens.data[0] == cfg.simulation.u0)))]
    checks += _sandwich_checks(cfg, ens, series, 4.0)[1:]
    results = {"n_overflowed": int(np.sum(ens.overflow_step >= 0)), "m2_final": float(series.m2[-1])}
    return checks, results, files


def _run_moments(cfg, out, threads):
    ens = simulate_ensemble(cfg.simulation, cfg.sigma, threads)
    series = estimate_second_moment(ens, cfg.sigma)
    series.to_csv(out / "moments.csv")
    checks = _sandwich_checks(cfg, ens, series, cfg.extra["n_stderr"])
    results = {
        "m2_final": float(series.m2[-1]),
        "stderr_final": float(series.stderr[-1]),
        "censored_final": int(series.censored[-1]),
        "degenerate": series.degenerate,
    }
    if cfg.sigma.kind is SigmaKind.LINEAR and cfg.simulation.alpha.regime() is Regime.SUPERCRITICAL:
        results["m2_exact_final"] = float(exact_linear_second_moment(cfg.simulation, cfg.sigma.lip)(series.grid[-1]))
    return checks, results, ["moments.csv"]


def _run_growth_t(cfg, out, threads):
    ens = simulate_ensemble(cfg.simulation, cfg.sigma, threads)
    series = estimate_second_moment(ens, cfg.sigma)
    series.to_csv(out / "moments.csv")
    fit = fit_growth_in_t(series, cfg.simulation.alpha, cfg.extra["fit_fraction"])
    tol = cfg.extra["slope_tolerance"]
    checks = [
        Check(
            "slope_in_band",
            fit.in_band(tol),
            f"slope {fit.slope:.6g} vs band [{fit.theory_lower:.6g}, {fit.theory_upper:.6g}] +/- {tol:g}",
        )
    ]
    return checks, {"fit": fit.to_dict()}, ["moments.csv"]


def _run_growth_lambda(cfg, out, threads):
    base = cfg.simulation
    configs = [base.with_(lam=lam) for lam in cfg.extra["lambdas"]]
    t_eval = cfg.extra["t_eval"]
    fit, series = fit_growth_in_lambda(configs, cfg.sigma, t_eval, threads)
    rows = []
    for c, s in zip(configs, series):
        m2, se, idx = s.value_at(t_eval)
        rows.append((float(c.lam), float(c.lam**2), m2, se, int(s.censored[idx])))
    write_csv(out / "lambda_sweep.csv", ["lambda", "lambda_sq", "m2", "stderr", "censored"], rows)
    rtol = cfg.extra["relative_tolerance"]
    lo, hi = fit.theory_lower * (1 - rtol), fit.theory_upper * (1 + rtol)
    checks = [Check("slope_in_band", lo <= fit.slope <= hi, f"slope {fit.slope:.6g} vs [{lo:.6g}, {hi:.6g}]")]
    return checks, {"fit": fit.to_dict()}, ["lambda_sweep.csv"]


def _ode_checks(sol, closed, t_star, a, window) -> list[Check]:
    sel = sol.t <= a + 0.9 * (t_star - a)
    rel = float(np.max(np.abs(sol.y[sel] / closed(sol.t[sel]) - 1.0))) if sel.any() else math.nan
    lo, hi = window
    in_window = sol.overflowed and lo * t_star <= sol.last_valid_t <= hi * t_star
    return [
        Check("ode_matches_closed_form", rel <= 1e-6, f"max relative error {rel:.3g} up to 0.9 t*"),
        Check(
            "ode_diverges_in_window",
            in_window,
            f"last finite t={sol.last_valid_t!r}, window [{lo * t_star!r}, {hi * t_star!r}]",
        ),
    ]


def _write_ode(out, sol, closed):
    rows = ((float(t), float(y), float(closed(t))) for t, y in zip(sol.t, sol.y))
    write_csv(out / "blowup_ode.csv", ["t", "f_numeric", "f_closed_form"], rows)


def _run_blowup(cfg, out, threads):
    sim, sigma, ex = cfg.simulation, cfg.sigma, cfg.extra
    c, lam, L, b, a = sim.u0**2, sim.lam, sigma.lower, sigma.superlinear_b, sim.a
    regime = sim.alpha.regime()
    checks: list[Check] = []
    files = []
    if regime is Regime.SUPERCRITICAL:
        t_star = blowup_time_supercritical(c, lam, L, b, sim.alpha, a)
        horizon = a + 2.0 * (t_star - a)
        sol = integrate_moment_ode(c, lam, L, b, sim.alpha, a, horizon, ex["ode_steps"])

        def closed(t):
            return moment_closed_form(c, lam, L, b, sim.alpha, a, t)

        checks += _ode_checks(sol, closed, t_star, a, ex["ode_window"])
        _write_ode(out, sol, closed)
        files.append("blowup_ode.csv")
        res = detect_moment_explosion(sim, sigma, ex["threshold"], threads)
        limit = t_star + ex["grid_step_slack"] * res.grid_dt
        if res.detected:
            ok, detail = res.t_star_numeric <= limit, f"t_numeric={res.t_star_numeric!r} <= {limit!r}"
        else:
            ok = sim.T < t_star
            detail = "not detected" + (" (horizon before t*)" if ok else " although horizon covers t*")
        checks.append(Check("detector_not_after_closed_form", ok, detail))
        result = res.to_dict()
        result["ode_last_finite_t"] = sol.last_valid_t
    elif regime is Regime.CRITICAL:
        b_start = ex["b_start"] if ex["b_start"] is not None else a + (sim.T - a) / sim.n_steps
        t_star = blowup_time_critical(c, lam, L, b, a, b_start)
        sol = integrate_moment_ode_critical(c, lam, L, b, a, b_start, a + 2.0 * (t_star - a), ex["ode_steps"])

        def closed(t):
            return moment_closed_form_critical(c, lam, L, b, a, b_start, t)

        checks += _ode_checks(sol, closed, t_star, a, ex["ode_window"])
        _write_ode(out, sol, closed)
        files.append("blowup_ode.csv")
        result = {
            "alpha": sim.alpha.value, "regime": regime.value, "t_star_closed_form": t_star,
            "t_star_numeric": None, "ode_last_finite_t": sol.last_valid_t,
            "params": {"c": c, "lambda": lam, "L": L, "b": b, "a": a, "b_start": b_start},
        }
    else:
        res = blowup_subcritical_transform(c, lam, L, b, sim.alpha, a, sim.T)
        p = sim.alpha.p
        checks.append(Check("sign_condition", p * (1 - b) > 0, f"(2alpha-1)(1-b) = {p * (1 - b)!r}"))
        ts = np.linspace(a, sim.T, 1025)
        br = subcritical_bracket(c, lam, L, b, sim.alpha, a, sim.T, ts)
        write_csv(out / "bracket.csv", ["t", "bracket"], ((float(t), float(v)) for t, v in zip(ts, br)))
        files.append("bracket.csv")
        if math.isfinite(res.t_star_closed_form):
            crossed = bool(np.any(br <= 0))
            first = float(ts[np.argmax(br <= 0)]) if crossed else math.nan
            dt = ts[1] - ts[0]
            ok = crossed and abs(first - res.t_star_closed_form) <= dt
            checks.append(Check("bracket_zero_on_grid", ok, f"first non-positive grid point {first!r}"))
        result = res.to_dict()
    return checks, result, files


def _run_contraction(cfg, out, threads):
    sim, sigma, ex = cfg.simulation, cfg.sigma, cfg.extra
    d = picard_contraction_demo(sim, sigma, ex["beta_norm"], ex["n_iterations"])
    ratios = [d[k + 1] / d[k] if d[k] > 0 else math.nan for k in range(len(d) - 1)]
    write_csv(
        out / "contraction.csv",
        ["k", "d", "ratio"],
        ((k, float(v), float(ratios[k - 1]) if k > 0 else math.nan) for k, v in enumerate(d)),
    )
    factor = (sim.lam * sigma.lip) ** 2 / ex["beta_norm"]
    tol = ex["ratio_tolerance"] if ex["ratio_tolerance"] is not None else factor + ex["slack"]
    checks = []
    if factor < 1:
        if all(v == 0 for v in d):
            checks.append(Check("contraction", True, "all distances zero"))
        else:
            finite = [r for r in ratios if not math.isnan(r)]
            ok = bool(finite) and all(r <= tol for r in finite) and all(r < 1 for r in finite)
            checks.append(Check("contraction", ok, f"max ratio {max(finite, default=math.nan):.4g} <= {tol:.4g}"))
    results = {"distances": d, "ratios": ratios, "theory_factor": factor, "ratio_tolerance": tol}
    return checks, results, ["contraction.csv"]


def _run_gronwall(cfg, out, threads):
    sim, ex = cfg.simulation, cfg.extra
    delta, k, p = ex["delta"], ex["k"], ex["alpha_power"]
    sol = solve_conformable_ivp(lambda t, y: k * y, p, sim.a, delta, sim.T, ex["n_steps"])
    bound = np.array([gronwall_bound(delta, k, p, sim.a, float(t)) for t in sol.t])
    write_csv(out / "gronwall.csv", ["t", "r", "bound"], zip(map(float, sol.t), map(float, sol.y), map(float, bound)))
    slack = 1.0 + ex["rel_slack"]
    ok = bool(np.all(sol.y <= bound * slack)) and bool(np.all(sol.y >= 0))
    worst = float(np.max(sol.y / bound))
    return [Check("gronwall_majorant", ok, f"max r/bound = {worst!r}")], {"max_ratio": worst}, ["gronwall.csv"]


RUNNERS = {
    "simulate": _run_simulate,
    "moments": _run_moments,
    "growth_t": _run_growth_t,
    "growth_lambda": _run_growth_lambda,
    "blowup": _run_blowup,
    "contraction": _run_contraction,
    "gronwall_check": _run_gronwall,
}


def reproducibility(cfg: ExperimentConfig) -> dict:
    sim = cfg.simulation
    return {
        "master_seed": sim.master_seed,
        "grid": {"a": sim.a, "T": sim.T, "n_steps": sim.n_steps},
        "version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> tuple[int, dict]:
    """Run ``cfg`` and write its artifacts; returns ``(exit status, summary)``.

    Module precondition violations propagate as ``ValueError`` and I/O
    problems as ``OSError``; :func:`main` maps both to status 3.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    checks, results, files = RUNNERS[cfg.experiment](cfg, out, threads)
    passed = all(c.passed for c in checks)
    summary = {
        "experiment": cfg.experiment,
        "status": "pass" if passed else "fail",
        "checks": [c.to_dict() for c in checks],
        "results": results,
        "warnings": list(cfg.warnings),
        "files": files,
        "config": cfg.resolved(),
        "reproducibility": reproducibility(cfg),
    }
    atomic_write_text(out / "config.yaml", cfg.to_yaml())
    write_json(out / "summary.json", summary)
    return (EXIT_OK if passed else EXIT_CHECK_FAILED), summary


def _error(status: int, kind: str, errors: list[str], out: Path | None) -> int:
    record = {"status": status, "kind": kind, "errors": errors}
    print(json.dumps(record), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            write_json(out / "error.json", record)
        except OSError:
            pass
    return status


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML experiment file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override simulation.master_seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads (never changes outputs)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (overrides output_dir)")

    parser = argparse.ArgumentParser(
        prog="conformable-sde",
        description="Monte Carlo and closed-form checks for conformable time-fractional stochastic equations.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    opts = vars(args)
    out = Path(opts["out"]) if "out" in opts else None
    threads = opts.get("threads", 1)
    if threads < 1:
        return _error(EXIT_CONFIG, "config_error", ["--threads must be >= 1"], out)
    if "config" not in opts:
        return _error(EXIT_CONFIG, "config_error", ["--config is required"], out)
    try:
        raw = Path(opts["config"]).read_text()
    except OSError as exc:
        return _error(EXIT_CONFIG, "config_error", [f"cannot read config: {exc}"], out)
    if "seed" in opts:
        try:
            doc = yaml.safe_load(raw) or {}
            if isinstance(doc, dict):
                sim = doc.setdefault("simulation", {})
                if isinstance(sim, dict):
                    sim["master_seed"] = opts["seed"]
                raw = yaml.safe_dump(doc)
        except yaml.YAMLError:
            pass
    experiment = args.command.replace("-", "_")
    try:
        cfg = validate_config(raw, experiment=experiment, output_dir=opts.get("out"))
    except ConfigError as exc:
        return _error(EXIT_CONFIG, "config_error", exc.errors, out)
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    try:
        status, summary = run_experiment(cfg, threads)
    except ValueError as exc:
        return _error(EXIT_PRECONDITION, "precondition", [str(exc)], cfg.output_dir)
    except OSError as exc:
        return _error(EXIT_PRECONDITION, "io_error", [str(exc)], None)
    for c in summary["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['detail']}")
    print(f"{summary['status']}: {cfg.output_dir / 'summary.json'}")
    return status


if __name__ == "__main__":
    sys.exit(main())
