"""Deterministic conformable fractional calculus.

All integrals here run on the transformed clock ``v = (t - a)**alpha / alpha``.
On that clock the kernel ``(s - a)**(alpha - 1) ds`` is exactly ``dv``, so the
endpoint singularity at ``s = a`` disappears and constants integrate exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class Regime(enum.Enum):
    """Square-integrability class of the kernel ``(s - a)**(alpha - 1)``."""

    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"


@dataclass(frozen=True)
class Alpha:
    """Fractional order in (0, 1]; ``value == 1`` is the classical limit."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if not (math.isfinite(v) and 0.0 < v <= 1.0):
            raise ValueError(f"alpha out of range (0,1]: {self.value!r}")
        object.__setattr__(self, "value", v)

    def regime(self) -> Regime:
        if self.value < 0.5:
            return Regime.SUBCRITICAL
        if self.value == 0.5:
            return Regime.CRITICAL
        return Regime.SUPERCRITICAL

    @property
    def p(self) -> float:
        """Exponent ``2*alpha - 1`` of the squared kernel's antiderivative."""
        return 2.0 * self.value - 1.0

    def __float__(self) -> float:
        return self.value


def as_alpha(alpha: Alpha | float) -> Alpha:
    return alpha if isinstance(alpha, Alpha) else Alpha(alpha)


@dataclass(frozen=True)
class TimeWindow:
    a: float
    T: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.T)):
            raise ValueError("time window bounds must be finite")
        if self.a < 0:
            raise ValueError(f"start time a must be >= 0, got {self.a}")
        if not self.T > self.a:
            raise ValueError(f"horizon T={self.T} must exceed start a={self.a}")


@dataclass(frozen=True)
class WeightedNormParams:
    """Weight ``exp(-beta_norm * (t - a)**kappa / kappa)``.

    ``kappa = alpha`` gives the weight used for the deterministic IVP and
    ``kappa = 2*alpha - 1`` the one used for the stochastic contraction norm.
    """

    beta_norm: float
    kappa: float

    def __post_init__(self):
        if not self.beta_norm > 0:
            raise ValueError(f"beta_norm must be > 0, got {self.beta_norm}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")


def _finite(x: float, what: str) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"non-finite {what}: {x}")
    return x


def to_clock(t, a: float, alpha: float):
    """Map time to the transformed clock ``(t - a)**alpha / alpha``."""
    return np.power(np.subtract(t, a), alpha) / alpha


def from_clock(v, a: float, alpha: float):
    return a + np.power(np.multiply(alpha, v), 1.0 / alpha)


def conformable_derivative(
    f: Callable[[float], float],
    alpha: Alpha | float,
    a: float,
    t: float,
    h: float | None = None,
) -> float:
    """``(t - a)**(1 - alpha) * f'(t)`` with a centered difference of step ``h``.

    The point ``t = a`` is excluded; the derivative there is only defined as a
    limit and nothing downstream needs it.
    """
    alpha = as_alpha(alpha)
    if not t > a:
        raise ValueError(f"conformable derivative needs t > a (t={t}, a={a})")
    if h is None:
        h = 1e-5 * max(1.0, abs(t))
    if not (h > 0 and t - h > a):
        raise ValueError(f"step h={h} must be positive and smaller than t - a = {t - a}")
    fp = _finite(f(t + h), "f evaluation")
    fm = _finite(f(t - h), "f evaluation")
    return (t - a) ** (1.0 - alpha.value) * (fp - fm) / (2.0 * h)


def _eval_many(f: Callable, s: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(f(s), dtype=float)
    except (TypeError, ValueError):
        out = None
    if out is None or out.shape != s.shape:
        out = np.array([f(float(x)) for x in s], dtype=float)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite f evaluation in fractional integral")
    return out


def fractional_integral(
    f: Callable[[float], float],
    alpha: Alpha | float,
    a: float,
    t: float,
    n_panels: int = 4096,
) -> float:
    """Quadrature of ``int_a^t (s - a)**(alpha - 1) f(s) ds``.

    Composite midpoint rule on uniform panels of the transformed clock; exact
    for constants and second order for smooth ``f``. ``f`` may be vectorized
    over numpy arrays; scalar-only callables are evaluated point by point.
    """
    alpha = as_alpha(alpha)
    if not t > a:
        if t == a:
            return 0.0
        raise ValueError(f"fractional integral needs t >= a (t={t}, a={a})")
    if n_panels < 1:
        raise ValueError("n_panels must be >= 1")
    V = (t - a) ** alpha.value / alpha.value
    dv = V / n_panels
    v_mid = (np.arange(n_panels) + 0.5) * dv
    s = from_clock(v_mid, a, alpha.value)
    return float(np.sum(_eval_many(f, s)) * dv)


def gronwall_bound(delta: float, k: float, alpha_power: float, a: float, t: float) -> float:
    """Majorant ``delta * exp(k (t-a)**p / p)`` for
    ``r(t) <= delta + k int_a^t (s-a)**(p-1) r(s) ds``."""
    for name, x in (("delta", delta), ("k", k), ("alpha_power", alpha_power), ("a", a), ("t", t)):
        _finite(x, name)
    if delta < 0 or k < 0:
        raise ValueError("delta and k must be nonnegative")
    if alpha_power <= 0:
        raise ValueError("alpha_power must be > 0")
    if t < a:
        raise ValueError(f"gronwall bound needs t >= a (t={t}, a={a})")
    return delta * math.exp(k * (t - a) ** alpha_power / alpha_power)


def weight_e(t: float, a: float, params: WeightedNormParams):
    """``exp(-beta_norm (t - a)**kappa / kappa)``; accepts scalars or arrays."""
    dt = np.subtract(t, a)
    if np.any(dt < 0):
        raise ValueError("weight needs t >= a")
    out = np.exp(-params.beta_norm * np.power(dt, params.kappa) / params.kappa)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class IVPSolution:
    """Samples of an IVP solution.

    When the state became non-finite, ``overflowed`` is set and the arrays stop
    at the last valid sample, whose time is ``last_valid_t``.
    """

    t: np.ndarray
    y: np.ndarray
    overflowed: bool
    last_valid_t: float


def _rk4_on_clock(
    rhs: Callable[[float, float], float],
    v_grid: np.ndarray,
    time_of: Callable[[float], float],
    y0: float,
) -> IVPSolution:
    # rhs(t, y) is dy/dv; the clock map only supplies t for the rhs.
    n = len(v_grid) - 1
    ys = np.empty(n + 1)
    ys[0] = y0
    y = float(y0)

    def g(v, y):
        return rhs(float(time_of(v)), y)

    for i in range(n):
        v, h = float(v_grid[i]), float(v_grid[i + 1] - v_grid[i])
        try:
            k1 = g(v, y)
            k2 = g(v + 0.5 * h, y + 0.5 * h * k1)
            k3 = g(v + 0.5 * h, y + 0.5 * h * k2)
            k4 = g(v + h, y + h * k3)
            y_new = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        except (OverflowError, ZeroDivisionError):
            y_new = math.inf
        if not math.isfinite(y_new):
            t = np.array([time_of(x) for x in v_grid[: i + 1]], dtype=float)
            return IVPSolution(t, ys[: i + 1].copy(), True, float(t[-1]))
        y = y_new
        ys[i + 1] = y
    t = np.array([time_of(x) for x in v_grid], dtype=float)
    return IVPSolution(t, ys, False, float(t[-1]))


def solve_conformable_ivp(
    f: Callable[[float, float], float],
    alpha: Alpha | float,
    a: float,
    y_a: float,
    T: float,
    n_steps: int,
) -> IVPSolution:
    """Solve ``T_alpha y = f(t, y)``, ``y(a) = y_a`` on ``[a, T]``.

    On the clock ``v = (t-a)**alpha / alpha`` the equation is the regular ODE
    ``dy/dv = f(t(v), y)``; it is integrated with fixed-step classical RK4 on a
    uniform ``v`` grid and the samples are mapped back to ``t``.
    """
    alpha = as_alpha(alpha)
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    TimeWindow(a, T)
    V = (T - a) ** alpha.value / alpha.value
    v_grid = np.linspace(0.0, V, n_steps + 1)

    def time_of(v):
        return a + (alpha.value * v) ** (1.0 / alpha.value)

    sol = _rk4_on_clock(f, v_grid, time_of, float(y_a))
    if not sol.overflowed:
        sol.t[-1] = T
    return sol


def solve_log_clock_ivp(
    f: Callable[[float, float], float],
    a: float,
    t0: float,
    y0: float,
    T: float,
    n_steps: int,
) -> IVPSolution:
    """Solve ``(t - a) y' = f(t, y)``, ``y(t0) = y0`` for ``a < t0 < T``.

    This is the order-zero end of the conformable family: the natural clock is
    ``v = log((t - a) / (t0 - a))``, on which ``dy/dv = f(t, y)``.
    """
    if not (t0 > a and T > t0):
        raise ValueError("log-clock IVP needs a < t0 < T")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    v_grid = np.linspace(0.0, math.log((T - a) / (t0 - a)), n_steps + 1)

    def time_of(v):
        return a + (t0 - a) * math.exp(v)

    sol = _rk4_on_clock(f, v_grid, time_of, float(y0))
    if not sol.overflowed:
        sol.t[-1] = T
    return sol
