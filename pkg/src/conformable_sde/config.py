"""Experiment configuration: YAML parsing and full validation.

Every problem found is collected; nothing is constructed unless the whole
document is valid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from conformable_sde.calculus import Alpha, TimeWindow
from conformable_sde.paths import OVERFLOW_THRESHOLD, SigmaSpec, SimulationConfig

EXPERIMENTS = ("simulate", "moments", "growth_t", "growth_lambda", "blowup", "contraction", "gronwall_check")
SIGMA_KINDS = ("linear", "superlinear", "zero", "piecewise_linear")

SIM_DEFAULTS = {
    "a": 0.0,
    "u0": 1.0,
    "master_seed": 0,
    "truncated_start": None,
    "overflow_threshold": OVERFLOW_THRESHOLD,
}
SIM_REQUIRED = ("alpha", "T", "n_steps", "lambda", "n_paths")

EXTRA_DEFAULTS = {
    "simulate": {"dump_format": "csv"},
    "moments": {"n_stderr": 4.0},
    "growth_t": {"fit_fraction": 0.5, "slope_tolerance": 0.1},
    "growth_lambda": {"lambdas": [0.5, 1.0, 1.5, 2.0], "t_eval": None, "relative_tolerance": 0.1},
    "blowup": {
        "threshold": 1e6,
        "grid_step_slack": 2,
        "ode_steps": 20000,
        "ode_window": [0.99, 1.01],
        "b_start": None,
    },
    "contraction": {"beta_norm": 4.0, "n_iterations": 5, "ratio_tolerance": None, "slack": 0.15},
    "gronwall_check": {"delta": 1.0, "k": 1.0, "alpha_power": None, "n_steps": 1000, "rel_slack": 1e-8},
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ExperimentConfig:
    experiment: str
    simulation: SimulationConfig
    sigma: SigmaSpec
    sigma_raw: dict
    output_dir: Path
    extra: dict
    warnings: list[str] = field(default_factory=list)

    def resolved(self) -> dict:
        """Fully defaulted config tree; feeding it back reproduces the run."""
        s = self.simulation
        return {
            "experiment": self.experiment,
            "simulation": {
                "alpha": s.alpha.value,
                "a": s.a,
                "T": s.T,
                "n_steps": s.n_steps,
                "lambda": s.lam,
                "u0": s.u0,
                "n_paths": s.n_paths,
                "master_seed": s.master_seed,
                "truncated_start": s.truncated_start,
                "overflow_threshold": s.overflow_threshold,
            },
            "sigma": dict(self.sigma_raw),
            "output_dir": str(self.output_dir),
            "extra": dict(self.extra),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.resolved(), sort_keys=True)


def _num(x):
    # YAML 1.1 reads "1e6" as a string
    if isinstance(x, str):
        try:
            return float(x)
        except ValueError:
            return x
    return x


def _is_real(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool) or (isinstance(x, float) and x.is_integer())


def _build_sigma(raw, errors: list[str]) -> tuple[SigmaSpec | None, dict]:
    if not isinstance(raw, dict):
        errors.append("sigma must be a mapping with a 'kind'")
        return None, {}
    raw = {k: _num(v) for k, v in raw.items()}
    kind = raw.get("kind")
    if kind not in SIGMA_KINDS:
        errors.append(f"sigma.kind must be one of {', '.join(SIGMA_KINDS)}; got {kind!r}")
        return None, raw
    allowed = {
        "linear": {"L"},
        "superlinear": {"L", "b"},
        "zero": set(),
        "piecewise_linear": {"lower", "lip", "knee"},
    }[kind]
    for k in sorted(set(raw) - allowed - {"kind"}):
        errors.append(f"sigma: unknown key {k!r} for kind {kind}")
    n0 = len(errors)
    if kind == "linear":
        if not (_is_real(raw.get("L")) and raw["L"] > 0):
            errors.append("sigma.L must be a real > 0")
    elif kind == "superlinear":
        if not (_is_real(raw.get("L")) and raw["L"] > 0):
            errors.append("sigma.L must be a real > 0")
        if not (_is_real(raw.get("b")) and raw["b"] > 1):
            errors.append("sigma.b must be a real > 1 for superlinear sigma")
    elif kind == "piecewise_linear":
        raw.setdefault("knee", 1.0)
        lo, lip, knee = raw.get("lower"), raw.get("lip"), raw.get("knee")
        if not (_is_real(lo) and _is_real(lip) and 0 < lo <= lip):
            errors.append("sigma.lower and sigma.lip must satisfy 0 < lower <= lip")
        if not (_is_real(knee) and knee > 0):
            errors.append("sigma.knee must be a real > 0")
    if len(errors) > n0:
        return None, raw
    if kind == "linear":
        return SigmaSpec.linear(raw["L"]), raw
    if kind == "superlinear":
        return SigmaSpec.superlinear(raw["L"], raw["b"]), raw
    if kind == "zero":
        return SigmaSpec.zero(), raw
    return SigmaSpec.piecewise_linear(raw["lower"], raw["lip"], raw["knee"]), raw


def _check_simulation(raw, errors: list[str], experiment: str | None = None) -> dict:
    if not isinstance(raw, dict):
        errors.append("simulation must be a mapping")
        return dict(SIM_DEFAULTS)
    sim = {**SIM_DEFAULTS, **{k: _num(v) for k, v in raw.items()}}
    for k in sorted(set(sim) - set(SIM_DEFAULTS) - set(SIM_REQUIRED)):
        errors.append(f"simulation: unknown key {k!r}")
    for k in SIM_REQUIRED:
        if k not in sim:
            errors.append(f"simulation.{k} is required")
    alpha = sim.get("alpha")
    if "alpha" in sim and not (_is_real(alpha) and 0 < alpha <= 1):
        errors.append("alpha out of range (0,1]")
    if "lambda" in sim and not (_is_real(sim["lambda"]) and sim["lambda"] > 0):
        errors.append("lambda must be a real > 0")
    if not (_is_real(sim["u0"]) and sim["u0"] >= 0):
        errors.append("u0 must be a real >= 0")
    if not (_is_real(sim["a"]) and sim["a"] >= 0):
        errors.append("a must be a real >= 0")
    if "T" in sim and not (_is_real(sim["T"]) and _is_real(sim["a"]) and sim["T"] > sim["a"]):
        errors.append("T must be a real > a")
    for k in ("n_steps", "n_paths"):
        if k in sim and not (_is_int(sim[k]) and sim[k] >= 1):
            errors.append(f"{k} must be an integer >= 1")
        elif k in sim:
            sim[k] = int(sim[k])
    seed = sim["master_seed"]
    if not (_is_int(seed) and 0 <= seed < 2**64):
        errors.append("master_seed must be an unsigned 64-bit integer")
    else:
        sim["master_seed"] = int(seed)
    thr = sim["overflow_threshold"]
    if not (_is_real(thr) and thr > 0):
        errors.append("overflow_threshold must be a real > 0")
    ts = sim["truncated_start"]
    if ts is not None and ts != "auto" and not (_is_real(ts) and ts > 0):
        errors.append("truncated_start must be null, 'auto' or a real > 0")
    simulated = experiment not in ("blowup", "gronwall_check")
    if simulated and _is_real(alpha) and 0 < alpha <= 0.5 and ts is None:
        errors.append(
            "alpha <= 1/2 has a non-square-integrable kernel; set simulation.truncated_start "
            "to simulate this regime"
        )
    return sim


def _check_extra(experiment: str, raw, sim: dict, sigma: SigmaSpec | None, errors, warns) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append("extra must be a mapping")
        return {}
    defaults = EXTRA_DEFAULTS[experiment]
    extra = {**defaults, **{k: _num(v) for k, v in raw.items()}}
    for k in sorted(set(extra) - set(defaults)):
        errors.append(f"extra: unknown key {k!r} for experiment {experiment}")
    alpha = sim.get("alpha")
    supercritical = _is_real(alpha) and alpha > 0.5
    lam = sim.get("lambda")

    if experiment in ("growth_t", "growth_lambda", "contraction") and _is_real(alpha) and not supercritical:
        errors.append(f"{experiment} needs alpha > 1/2")
    if experiment == "simulate" and extra["dump_format"] not in ("csv", "npz"):
        errors.append("extra.dump_format must be 'csv' or 'npz'")
    if experiment == "moments" and not (_is_real(extra["n_stderr"]) and extra["n_stderr"] > 0):
        errors.append("extra.n_stderr must be a real > 0")
    if experiment == "growth_t":
        ff = extra["fit_fraction"]
        if not (_is_real(ff) and 0 < ff < 1):
            errors.append("extra.fit_fraction must lie in (0,1)")
        if not (_is_real(extra["slope_tolerance"]) and extra["slope_tolerance"] >= 0):
            errors.append("extra.slope_tolerance must be a real >= 0")
    if experiment == "growth_lambda":
        lams = [_num(x) for x in extra["lambdas"]] if isinstance(extra["lambdas"], list) else None
        if lams is None or not all(_is_real(x) and x > 0 for x in lams):
            errors.append("extra.lambdas must be a list of reals > 0")
        elif len(lams) < 4:
            errors.append("extra.lambdas needs at least 4 values (insufficient points)")
        elif any(b <= a for a, b in zip(lams, lams[1:])):
            errors.append("extra.lambdas must be strictly increasing")
        else:
            extra["lambdas"] = [float(x) for x in lams]
        t_eval = extra["t_eval"]
        if t_eval is None and _is_real(sim.get("T")):
            extra["t_eval"] = t_eval = float(sim["T"])
        if not (_is_real(t_eval) and _is_real(sim.get("T")) and _is_real(sim["a"])
                and sim["a"] < t_eval <= sim["T"]):
            errors.append("extra.t_eval must lie in (a, T]")
        if not (_is_real(extra["relative_tolerance"]) and extra["relative_tolerance"] >= 0):
            errors.append("extra.relative_tolerance must be a real >= 0")
    if experiment == "blowup":
        if sigma is not None and sigma.superlinear_b is None:
            errors.append("blowup needs sigma.kind = superlinear")
        u0 = sim.get("u0")
        thr = extra["threshold"]
        if not _is_real(thr) or (_is_real(u0) and thr <= u0**2):
            errors.append("extra.threshold must be a real > u0^2")
        if not (_is_int(extra["grid_step_slack"]) and extra["grid_step_slack"] >= 0):
            errors.append("extra.grid_step_slack must be an integer >= 0")
        if not (_is_int(extra["ode_steps"]) and extra["ode_steps"] >= 1):
            errors.append("extra.ode_steps must be an integer >= 1")
        win = extra["ode_window"]
        if not (isinstance(win, list) and len(win) == 2 and all(_is_real(_num(x)) for x in win)
                and 0 < _num(win[0]) <= 1 <= _num(win[1])):
            errors.append("extra.ode_window must be [lo, hi] with 0 < lo <= 1 <= hi")
        bs = extra["b_start"]
        if bs is not None and not (_is_real(bs) and bs > sim.get("a", 0.0)):
            errors.append("extra.b_start must be a real > a")
        if _is_real(u0) and u0 <= 0:
            errors.append("blowup needs u0 > 0 (initial moment level must be positive)")
    if experiment == "contraction":
        beta = extra["beta_norm"]
        if not (_is_real(beta) and beta > 0):
            errors.append("extra.beta_norm must be a real > 0")
        elif sigma is not None and _is_real(lam):
            thresh = (lam * sigma.lip) ** 2
            if not beta > thresh:
                warns.append(
                    f"beta_norm below contraction threshold (lambda*Lip)^2={thresh:g}; "
                    "contraction hypothesis violated, no ratio is asserted"
                )
        if not (_is_int(extra["n_iterations"]) and extra["n_iterations"] >= 2):
            errors.append("extra.n_iterations must be an integer >= 2")
        rt = extra["ratio_tolerance"]
        if rt is not None and not (_is_real(rt) and rt > 0):
            errors.append("extra.ratio_tolerance must be null or a real > 0")
        if not (_is_real(extra["slack"]) and extra["slack"] >= 0):
            errors.append("extra.slack must be a real >= 0")
        if sigma is not None and not math.isfinite(sigma.lip):
            errors.append("contraction needs a globally Lipschitz sigma")
    if experiment == "gronwall_check":
        for k in ("delta", "k"):
            if not (_is_real(extra[k]) and extra[k] >= 0):
                errors.append(f"extra.{k} must be a real >= 0")
        ap = extra["alpha_power"]
        if ap is None and _is_real(alpha):
            extra["alpha_power"] = ap = float(alpha)
        if not (_is_real(ap) and ap > 0):
            errors.append("extra.alpha_power must be a real > 0")
        if not (_is_int(extra["n_steps"]) and extra["n_steps"] >= 1):
            errors.append("extra.n_steps must be an integer >= 1")
    return extra


def validate_config(raw: str, experiment: str | None = None, output_dir: str | None = None) -> ExperimentConfig:
    """Parse and validate a YAML experiment description.

    ``experiment`` and ``output_dir`` fill in the corresponding fields when the
    document omits them. Raises :class:`ConfigError` listing every problem.
    """
    try:
        doc = yaml.safe_load(raw) if raw else None
    except yaml.YAMLError as exc:
        raise ConfigError([f"config is not valid YAML: {exc}"]) from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(["config must be a mapping at top level"])
    errors: list[str] = []
    warns: list[str] = []
    for k in sorted(set(doc) - {"experiment", "simulation", "sigma", "output_dir", "extra"}):
        errors.append(f"unknown top-level key {k!r}")

    kind = doc.get("experiment", experiment)
    if kind is not None and experiment is not None and kind != experiment:
        errors.append(f"config experiment {kind!r} does not match subcommand {experiment!r}")
    if kind is None:
        errors.append("missing experiment kind")
    elif kind not in EXPERIMENTS:
        errors.append(f"unknown experiment kind {kind!r}; expected one of {', '.join(EXPERIMENTS)}")
        kind = None

    if "simulation" not in doc:
        errors.append("missing simulation section")
    sim = _check_simulation(doc.get("simulation", {}), errors, kind)
    if "sigma" not in doc:
        errors.append("missing sigma section")
        sigma, sigma_raw = None, {}
    else:
        sigma, sigma_raw = _build_sigma(doc["sigma"], errors)

    out = doc.get("output_dir", output_dir)
    if output_dir is not None:
        out = output_dir
    if out is None:
        errors.append("missing output_dir (set it in the config or pass --out)")

    extra = _check_extra(kind, doc.get("extra"), sim, sigma, errors, warns) if kind else {}

    if errors:
        raise ConfigError(errors)
    try:
        simulation = SimulationConfig(
            alpha=Alpha(sim["alpha"]),
            window=TimeWindow(float(sim["a"]), float(sim["T"])),
            lam=float(sim["lambda"]),
            u0=float(sim["u0"]),
            n_steps=sim["n_steps"],
            n_paths=sim["n_paths"],
            master_seed=sim["master_seed"],
            truncated_start=sim["truncated_start"],
            overflow_threshold=float(sim["overflow_threshold"]),
        )
    except ValueError as exc:
        raise ConfigError([str(exc)]) from None
    return ExperimentConfig(kind, simulation, sigma, sigma_raw, Path(out), extra, warns)
