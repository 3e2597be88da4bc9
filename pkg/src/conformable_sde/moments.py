"""Second-moment estimation and log-linear growth-rate fits."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from conformable_sde._io import write_csv
from conformable_sde.calculus import Alpha, Regime, as_alpha
from conformable_sde.paths import PathEnsemble, SigmaSpec, SimulationConfig, simulate_ensemble

MIN_FIT_POINTS = 8


@dataclass(frozen=True, eq=False)
class MomentSeries:
    """Sample estimates of ``E|u(t)|**2`` over censoring-filtered paths.

    ``censored[n]`` counts paths excluded at ``grid[n]`` because they had
    overflowed; ``degenerate`` is set when some time has no live path and
    ``stderr`` is ``inf`` when fewer than two live paths remain.
    """

    grid: np.ndarray
    m2: np.ndarray
    stderr: np.ndarray
    n_paths: int
    censored: np.ndarray
    a: float = 0.0
    lam: float = math.nan
    lip: float = math.nan
    lower: float = math.nan
    seed: int | None = None
    degenerate: bool = False
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def to_csv(self, path) -> None:
        rows = (
            (float(t), float(m), float(s), int(c))
            for t, m, s, c in zip(self.grid, self.m2, self.stderr, self.censored)
        )
        write_csv(path, ["t", "m2", "stderr", "censored"], rows)

    def value_at(self, t: float) -> tuple[float, float, int]:
        """``(m2, stderr, index)`` at the grid point equal to ``t``."""
        idx = int(np.argmin(np.abs(self.grid - t)))
        scale = max(1.0, abs(t))
        if abs(self.grid[idx] - t) > 1e-9 * scale:
            raise ValueError(f"t={t} is not a grid point")
        return float(self.m2[idx]), float(self.stderr[idx]), idx


def estimate_second_moment(ensemble: PathEnsemble, sigma: SigmaSpec | None = None) -> MomentSeries:
    """Per-time sample mean of ``u**2`` and its standard error.

    Passing ``sigma`` records its growth constants for later fits.

    Reductions run along the path axis of a contiguous row, so numpy's
    pairwise summation visits paths in index order whatever produced them.
    """
    data = ensemble.data
    if data.size == 0:
        raise ValueError("empty ensemble")
    cens = ensemble.censored_mask()
    live = ~cens
    n_live = live.sum(axis=1)
    sq = np.where(live, data * data, 0.0)
    notes = []
    with np.errstate(invalid="ignore", divide="ignore"):
        m2 = sq.sum(axis=1) / n_live
        dev = np.where(live, sq - m2[:, None], 0.0)
        var = (dev * dev).sum(axis=1) / (n_live - 1)
        stderr = np.sqrt(var / n_live)
    stderr = np.where(n_live >= 2, stderr, math.inf)
    # every path starts at u0, so the first row is exact
    if np.all(data[0] == data[0, 0]):
        m2[0], stderr[0] = data[0, 0] ** 2, 0.0
    degenerate = bool(np.any(n_live == 0))
    if degenerate:
        notes.append("all paths censored at some grid times; m2 is NaN there")
    if ensemble.n_paths == 1:
        notes.append("single-path ensemble: standard errors are undefined (inf)")
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    cfg = ensemble.config
    return MomentSeries(
        grid=ensemble.grid.copy(),
        m2=m2,
        stderr=stderr,
        n_paths=ensemble.n_paths,
        censored=cens.sum(axis=1),
        a=cfg.a,
        lam=cfg.lam,
        lip=sigma.lip if sigma else math.nan,
        lower=sigma.lower if sigma else math.nan,
        seed=cfg.master_seed,
        degenerate=degenerate,
        warnings=tuple(notes),
    )


@dataclass(frozen=True)
class GrowthFit:
    """OLS fit ``log m2 = intercept + slope * x`` with the theory band for ``slope``."""

    slope: float
    intercept: float
    r_squared: float
    theory_lower: float
    theory_upper: float
    fit_window: tuple[float, float]
    slope_stderr: float
    n_points: int
    abscissa: str = "tau"

    def in_band(self, widen: float = 0.0) -> bool:
        # rounding slack so an exact fit on a degenerate band still counts
        eps = 1e-12 * max(abs(self.theory_lower), abs(self.theory_upper))
        return self.theory_lower - widen - eps <= self.slope <= self.theory_upper + widen + eps

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fit_window"] = list(self.fit_window)
        return d


def ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float]:
    """Slope, intercept, r**2 and slope standard error of ``y ~ x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = float(np.dot(dx, dx))
    if sxx == 0:
        raise ValueError("degenerate abscissa: all x equal")
    slope = float(np.dot(dx, dy)) / sxx
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.dot(dy, dy))
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    se = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 else math.inf
    return slope, intercept, r2, se


def _growth_constants(alpha: Alpha, lam: float, lower: float, lip: float, tau_scale: float = 1.0):
    p = alpha.p
    return lam**2 * lower**2 * tau_scale / p, lam**2 * lip**2 * tau_scale / p


def fit_growth_in_t(series: MomentSeries, alpha: Alpha | float, fit_fraction: float = 0.5) -> GrowthFit:
    """Regress ``log m2`` on ``tau = (t - a)**(2 alpha - 1)`` over the trailing
    ``fit_fraction`` of the time window.

    The theory band is ``[lam**2 lower**2, lam**2 lip**2] / (2 alpha - 1)``
    using the constants carried by ``series``.
    """
    alpha = as_alpha(alpha)
    if alpha.regime() is not Regime.SUPERCRITICAL:
        raise ValueError("growth fit in t needs alpha > 1/2")
    if not 0 < fit_fraction < 1:
        raise ValueError("fit_fraction must lie in (0, 1)")
    t = series.grid
    t_hi = float(t[-1])
    t_lo = t_hi - fit_fraction * (t_hi - float(t[0]))
    sel = t >= t_lo
    if sel.sum() < MIN_FIT_POINTS:
        raise ValueError(f"fit window has {sel.sum()} points, need >= {MIN_FIT_POINTS}")
    m2 = series.m2[sel]
    if not np.all(m2 > 0):
        raise ValueError("fit window contains non-positive or undefined m2")
    if np.any(series.censored[sel] * 2 > series.n_paths):
        raise ValueError("fit window contains censored-majority points")
    tau = (t[sel] - series.a) ** alpha.p
    slope, intercept, r2, se = ols(tau, np.log(m2))
    lo, hi = _growth_constants(alpha, series.lam, series.lower, series.lip)
    return GrowthFit(slope, intercept, r2, lo, hi, (t_lo, t_hi), se, int(sel.sum()), "tau")


def fit_lambda_series(
    lams: Sequence[float],
    m2_values: Sequence[float],
    alpha: Alpha | float,
    a: float,
    t_eval: float,
    lower: float,
    lip: float,
) -> GrowthFit:
    """Regress ``log m2(t_eval)`` on ``lam**2``; band ``[lower**2, lip**2] tau / (2 alpha - 1)``."""
    alpha = as_alpha(alpha)
    lams = np.asarray(lams, dtype=float)
    m2_values = np.asarray(m2_values, dtype=float)
    if len(lams) < 4:
        raise ValueError(f"insufficient points: {len(lams)} lambda values, need >= 4")
    if np.any(np.diff(lams) <= 0):
        raise ValueError("lambda values must be strictly increasing")
    if not np.all(m2_values > 0):
        raise ValueError("non-positive or undefined m2 among lambda points")
    slope, intercept, r2, se = ols(lams**2, np.log(m2_values))
    tau = (t_eval - a) ** alpha.p
    lo, hi = _growth_constants(alpha, 1.0, lower, lip, tau)
    return GrowthFit(slope, intercept, r2, lo, hi, (float(lams[0]), float(lams[-1])), se, len(lams), "lambda^2")


def fit_growth_in_lambda(
    configs: Sequence[SimulationConfig],
    sigma: SigmaSpec,
    t_eval: float,
    threads: int = 1,
) -> tuple[GrowthFit, list[MomentSeries]]:
    """Simulate each config (identical except ``lam``) and fit ``log m2(t_eval)`` against ``lam**2``."""
    if len(configs) < 4:
        raise ValueError(f"insufficient points: {len(configs)} lambda values, need >= 4")
    base = configs[0]
    for c in configs[1:]:
        if c.with_(lam=base.lam) != base:
            raise ValueError("lambda sweep configs must differ only in lambda")
    if base.alpha.regime() is not Regime.SUPERCRITICAL:
        raise ValueError("growth fit in lambda needs alpha > 1/2")
    if not base.a < t_eval <= base.T:
        raise ValueError("t_eval must lie in (a, T]")
    series, m2 = [], []
    for c in configs:
        s = estimate_second_moment(simulate_ensemble(c, sigma, threads), sigma)
        val, _, idx = s.value_at(t_eval)
        if s.censored[idx] * 2 > s.n_paths:
            raise ValueError(f"censored-majority point at lambda={c.lam}")
        series.append(s)
        m2.append(val)
    fit = fit_lambda_series([c.lam for c in configs], m2, base.alpha, base.a, t_eval, sigma.lower, sigma.lip)
    return fit, series

