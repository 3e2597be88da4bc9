"""Monte Carlo paths of the mild solution
``u(t) = u0 + lam * int_a^t (s - a)**(alpha - 1) sigma(u(s)) dW_s``.

The stochastic integral is Ito. Each step uses the variance-exact weight
``w_n = sqrt(int_{t_n}^{t_{n+1}} (s - a)**(2 alpha - 2) ds)`` so that a frozen
``sigma`` reproduces the Ito isometry exactly; the pointwise kernel would be
infinite on the first step.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from conformable_sde._io import atomic_write_text, fmt
from conformable_sde.calculus import (
    Alpha,
    Regime,
    TimeWindow,
    WeightedNormParams,
    as_alpha,
    weight_e,
)

OVERFLOW_THRESHOLD = 1e12
# Paths are simulated in fixed blocks; the block layout, not the thread
# count, decides which arrays each numpy kernel sees.
PATH_BLOCK = 4096


class SigmaKind(enum.Enum):
    LINEAR = "linear"
    SUPERLINEAR = "superlinear"
    CUSTOM = "custom"


@dataclass(frozen=True)
class SigmaSpec:
    """Diffusion nonlinearity together with its growth constants.

    ``lip`` is the global Lipschitz constant (``inf`` for superlinear growth),
    ``lower`` the constant in ``|sigma(x)| >= lower * |x|**b`` with ``b = 1``
    unless ``superlinear_b`` is set. Use the classmethod constructors.
    """

    kind: SigmaKind
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    lip: float
    lower: float
    superlinear_b: float | None = None
    label: str = ""

    def __post_init__(self):
        if not self.lip > 0:
            raise ValueError(f"Lipschitz constant must be > 0, got {self.lip}")
        if not self.lower >= 0:
            raise ValueError(f"lower growth constant must be >= 0, got {self.lower}")
        if self.superlinear_b is not None and not self.superlinear_b > 1:
            raise ValueError(f"superlinear exponent b must be > 1, got {self.superlinear_b}")
        if self.kind is SigmaKind.SUPERLINEAR and self.superlinear_b is None:
            raise ValueError("superlinear sigma needs an exponent b > 1")

    def __call__(self, x):
        return self.func(x)

    @classmethod
    def linear(cls, L: float) -> "SigmaSpec":
        """``sigma(x) = L x``: here ``lip == lower == L``."""
        if not L > 0:
            raise ValueError(f"linear sigma needs L > 0, got {L}")
        L = float(L)
        return cls(SigmaKind.LINEAR, lambda x: L * x, lip=L, lower=L, label=f"linear(L={L:g})")

    @classmethod
    def superlinear(cls, L: float, b: float) -> "SigmaSpec":
        """``sigma(x) = L |x|**b`` with ``b > 1``."""
        if not L > 0:
            raise ValueError(f"superlinear sigma needs L > 0, got {L}")
        if not b > 1:
            raise ValueError(f"superlinear sigma needs b > 1, got {b}; use SigmaSpec.linear")
        L, b = float(L), float(b)
        return cls(
            SigmaKind.SUPERLINEAR,
            lambda x: L * np.abs(x) ** b,
            lip=math.inf,
            lower=L,
            superlinear_b=b,
            label=f"superlinear(L={L:g},b={b:g})",
        )

    @classmethod
    def zero(cls) -> "SigmaSpec":
        return cls(SigmaKind.CUSTOM, lambda x: np.zeros_like(x), lip=1.0, lower=0.0, label="zero")

    @classmethod
    def piecewise_linear(cls, lower: float, lip: float, knee: float = 1.0) -> "SigmaSpec":
        """Odd map with slope ``lower`` on ``|x| <= knee`` and ``lip`` beyond.

        Satisfies ``lower |x| <= |sigma(x)|`` and is ``lip``-Lipschitz, so it
        separates the two growth constants.
        """
        if not 0 < lower <= lip:
            raise ValueError("piecewise-linear sigma needs 0 < lower <= lip")
        if not knee > 0:
            raise ValueError("knee must be > 0")
        lower, lip, knee = float(lower), float(lip), float(knee)

        def func(x):
            ax = np.abs(x)
            return np.sign(x) * np.where(ax <= knee, lower * ax, lower * knee + lip * (ax - knee))

        return cls(
            SigmaKind.CUSTOM, func, lip=lip, lower=lower,
            label=f"piecewise_linear(lower={lower:g},lip={lip:g},knee={knee:g})",
        )

    @classmethod
    def custom(cls, func, lip: float, lower: float = 0.0, label: str = "custom") -> "SigmaSpec":
        return cls(SigmaKind.CUSTOM, func, lip=float(lip), lower=float(lower), label=label)


@dataclass(frozen=True)
class SimulationConfig:
    """Inputs of one ensemble run.

    ``truncated_start`` must be given (a positive offset, or ``"auto"`` for
    ``(T - a) / n_steps**2``) when ``alpha <= 1/2``: the squared kernel is not
    integrable at ``a`` there, and the grid then starts at ``a + eps``. This
    mode only illustrates non-existence; it is never switched on silently.
    """

    alpha: Alpha
    window: TimeWindow
    lam: float
    u0: float
    n_steps: int
    n_paths: int
    master_seed: int
    truncated_start: float | str | None = None
    overflow_threshold: float = OVERFLOW_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_alpha(self.alpha))
        if not (isinstance(self.lam, (int, float)) and self.lam > 0):
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if not (math.isfinite(self.u0) and self.u0 >= 0):
            raise ValueError(f"u0 must be finite and >= 0, got {self.u0}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be an integer >= 1, got {self.n_steps}")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValueError(f"n_paths must be an integer >= 1, got {self.n_paths}")
        if int(self.master_seed) != self.master_seed or not 0 <= self.master_seed < 2**64:
            raise ValueError(f"master_seed must be an unsigned 64-bit integer, got {self.master_seed}")
        if not self.overflow_threshold > 0:
            raise ValueError("overflow_threshold must be > 0")
        if self.truncated_start is not None and self.truncated_start != "auto":
            eps = float(self.truncated_start)
            if not 0 < eps < self.window.T - self.window.a:
                raise ValueError("truncated_start must lie in (0, T - a)")

    @property
    def a(self) -> float:
        return self.window.a

    @property
    def T(self) -> float:
        return self.window.T

    def start_offset(self) -> float:
        """Offset of the first grid point from ``a`` (0 unless truncated)."""
        if self.alpha.regime() is Regime.SUPERCRITICAL:
            return 0.0
        if self.truncated_start is None:
            raise ValueError(
                f"alpha={self.alpha.value} <= 1/2: the squared kernel is not integrable at a; "
                "enable truncated_start explicitly to simulate this regime"
            )
        if self.truncated_start == "auto":
            return (self.T - self.a) / self.n_steps**2
        return float(self.truncated_start)

    def grid(self) -> np.ndarray:
        t0 = self.a + self.start_offset()
        g = np.linspace(t0, self.T, self.n_steps + 1)
        g[0], g[-1] = t0, self.T
        return g

    def with_(self, **changes) -> "SimulationConfig":
        from dataclasses import replace

        return replace(self, **changes)


def kernel_weights(grid: np.ndarray, a: float, alpha: Alpha | float) -> np.ndarray:
    """Square roots of ``int_{t_n}^{t_{n+1}} (s - a)**(2 alpha - 2) ds``."""
    alpha = as_alpha(alpha)
    grid = np.asarray(grid, dtype=float)
    d = grid - a
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if np.any(d < 0):
        raise ValueError("grid must not start before a")
    p = alpha.p
    if p <= 0 and d[0] <= 0:
        raise ValueError(
            f"alpha={alpha.value} <= 1/2: first weight is infinite when the grid starts at a"
        )
    w2 = np.diff(np.log(d)) if p == 0 else np.diff(d**p) / p
    return np.sqrt(w2)


def path_normals(master_seed: int, path_ids, n_steps: int) -> np.ndarray:
    """Standard normals ``Z[p, n]`` as a pure function of (seed, path, step).

    Each path owns a Philox counter-based stream keyed by
    ``master_seed + 2**64 * path_id``; step ``n`` is the ``n``-th draw on it.
    """
    path_ids = np.asarray(path_ids, dtype=np.int64)
    out = np.empty((len(path_ids), n_steps))
    seed = int(master_seed)
    for i, p in enumerate(path_ids):
        bitgen = np.random.Philox(key=seed + (int(p) << 64))
        out[i] = np.random.Generator(bitgen).standard_normal(n_steps)
    return out


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Simulated paths; ``values[p, n]`` is path ``p`` at ``grid[n]``.

    Path values are NaN from ``overflow_step[p]`` on (``-1`` when the path
    never left ``|u| <= overflow_threshold``).
    """

    grid: np.ndarray
    data: np.ndarray  # time-major, shape (n_steps + 1, n_paths)
    overflow_step: np.ndarray
    config: SimulationConfig
    sigma_label: str = ""

    @property
    def values(self) -> np.ndarray:
        return self.data.T

    @property
    def n_paths(self) -> int:
        return self.data.shape[1]

    def censored_mask(self) -> np.ndarray:
        """Boolean (n_steps + 1, n_paths): path already overflowed at that step."""
        steps = np.arange(len(self.grid))[:, None]
        os_ = self.overflow_step[None, :]
        return (os_ >= 0) & (steps >= os_)

    def to_csv(self, path) -> None:
        """Long-format dump: ``path_id,step,t,u,overflow_flag``."""
        n_t, m = self.data.shape
        lines = ["path_id,step,t,u,overflow_flag"]
        cens = self.censored_mask()
        t_str = [fmt(t) for t in self.grid]
        for p in range(m):
            col = self.data[:, p]
            for n in range(n_t):
                lines.append(f"{p},{n},{t_str[n]},{fmt(col[n])},{int(cens[n, p])}")
        atomic_write_text(path, "\n".join(lines) + "\n")

    def to_npz(self, path) -> None:
        """Columnar binary dump with the same columns as :meth:`to_csv`."""
        n_t, m = self.data.shape
        np.savez(
            path,
            path_id=np.repeat(np.arange(m), n_t),
            step=np.tile(np.arange(n_t), m),
            t=np.tile(self.grid, m),
            u=self.values.reshape(-1),
            overflow_flag=self.censored_mask().T.reshape(-1).astype(np.int8),
        )


def _simulate_block(lo, hi, config, sigma, w, out, overflow_step):
    lam, thr = config.lam, config.overflow_threshold
    z = path_normals(config.master_seed, range(lo, hi), config.n_steps)
    u = np.full(hi - lo, float(config.u0))
    out[0, lo:hi] = u
    first = np.full(hi - lo, -1, dtype=np.int64)
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(config.n_steps):
            u = u + lam * sigma(u) * w[n] * z[:, n]
            bad = ~(np.abs(u) <= thr) & (first < 0)
            if bad.any():
                first[bad] = n + 1
                u[bad] = np.nan
            out[n + 1, lo:hi] = u
    overflow_step[lo:hi] = first


def simulate_ensemble(config: SimulationConfig, sigma: SigmaSpec, threads: int = 1) -> PathEnsemble:
    """Explicit variance-exact scheme ``u += lam sigma(u) w_n Z[p, n]``.

    Output is bitwise independent of ``threads``: every path draws from its
    own keyed stream and blocks of ``PATH_BLOCK`` paths are fixed up front.
    """
    grid = config.grid()
    w = kernel_weights(grid, config.a, config.alpha)
    m = config.n_paths
    data = np.empty((config.n_steps + 1, m))
    overflow_step = np.empty(m, dtype=np.int64)
    blocks = [(lo, min(lo + PATH_BLOCK, m)) for lo in range(0, m, PATH_BLOCK)]

    def run(block):
        _simulate_block(block[0], block[1], config, sigma, w, data, overflow_step)

    if threads <= 1 or len(blocks) == 1:
        for b in blocks:
            run(b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, blocks))
    data.setflags(write=False)
    overflow_step.setflags(write=False)
    return PathEnsemble(grid, data, overflow_step, config, sigma.label)


def exact_linear_second_moment(config: SimulationConfig, L: float) -> Callable:
    """``t -> u0**2 exp(lam**2 L**2 (t - a)**(2 alpha - 1) / (2 alpha - 1))``.

    Second moment of the mild solution for ``sigma(x) = L x``, where the upper
    and lower growth bounds coincide.
    """
    if config.alpha.regime() is not Regime.SUPERCRITICAL:
        raise ValueError("exact linear second moment needs alpha > 1/2")
    p = config.alpha.p
    rate = config.lam**2 * L**2 / p
    u02, a = config.u0**2, config.a

    def m2(t):
        return u02 * np.exp(rate * np.power(np.subtract(t, a), p))

    return m2


def picard_contraction_demo(
    config: SimulationConfig,
    sigma: SigmaSpec,
    beta_norm: float,
    n_iterations: int,
) -> list[float]:
    """Squared weighted-norm distances between successive Picard iterates.

    Iterates ``u_{k+1} = u0 + lam int (s-a)**(alpha-1) sigma(u_k) dW`` from
    ``u_0 = u0`` on one shared noise array and returns, for
    ``k = 0 .. n_iterations - 1``, ``sup_n a(t_n) mean_p (u_{k+1} - u_k)**2``
    with ``a(t) = exp(-beta_norm (t-a)**(2alpha-1) / (2alpha-1))``.
    For ``beta_norm > (lam lip)**2`` successive ratios should stay below
    ``(lam lip)**2 / beta_norm`` up to sampling error; below that threshold no
    ratio is promised.
    """
    if config.alpha.regime() is not Regime.SUPERCRITICAL:
        raise ValueError("Picard contraction demo needs alpha > 1/2")
    if not beta_norm > 0:
        raise ValueError(f"beta_norm must be > 0, got {beta_norm}")
    if n_iterations < 2:
        raise ValueError("n_iterations must be >= 2")
    grid = config.grid()
    w = kernel_weights(grid, config.a, config.alpha)
    z = path_normals(config.master_seed, range(config.n_paths), config.n_steps)
    dw = w[None, :] * z
    weight = weight_e(grid, config.a, WeightedNormParams(beta_norm, config.alpha.p))

    u_prev = np.full((config.n_paths, config.n_steps + 1), float(config.u0))
    dists = []
    for _ in range(n_iterations):
        incr = config.lam * sigma(u_prev[:, :-1]) * dw
        u_next = np.empty_like(u_prev)
        u_next[:, 0] = config.u0
        np.cumsum(incr, axis=1, out=u_next[:, 1:])
        u_next[:, 1:] += config.u0
        msd = np.mean((u_next - u_prev) ** 2, axis=0)
        dists.append(float(np.max(weight * msd)))
        u_prev = u_next
    return dists
