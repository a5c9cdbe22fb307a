"""Monte Carlo estimators of small ball probabilities of X(E(t)) and the
Laplace-side diagnostics that accompany them.

Replicates are split into a fixed chunk layout (depending on n_paths only);
each chunk draws from its own child stream and chunk results are reduced in
chunk order with compensated sums, so results do not depend on the number
of worker threads.

Estimators driven by E(T) alone (conditional Brownian, Laplace diagnostics,
E small-ball) use a stratified design per chunk on the first component's
uniform: equal-width strata on [1/n_u, 1] plus geometric strata on
[1e-18, 1/n_u] and one stratum [0, 1e-18]. Each chunk is an unbiased
estimate; the reported standard error is the spread across chunks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .outer import MAX_DENSE_POINTS, CovarianceSizeError, OuterFamily, OuterSpec, sample_at_times, sample_grid
from .parallel import chunk_sizes, fsum_rows, root_entropy, run_chunks
from .specfun import chung_probability
from .subordinators import SubordinatorSpec, sample_increment
from .time_change import TimeChangeSpec, passage_table, sample_E_at, sample_E_T

__all__ = [
    "Estimator",
    "MCEstimate",
    "PreconditionError",
    "DegenerateFitError",
    "wilson_interval",
    "estimate_conditional_bm",
    "estimate_direct",
    "tauberian_diagnostic",
    "weak_order_diagnostic",
    "prop_e_check",
    "estimate_e_small_ball",
    "fit_power_law",
    "stratified_uniforms",
]

WILSON_BELOW = 1e-3
_LOG_FLOOR = 1e-18


class PreconditionError(ValueError):
    """Inputs would give a silently biased or undefined result."""


class DegenerateFitError(ValueError):
    """Power-law fit is undefined for the given points."""


class Estimator(str, Enum):
    DIRECT = "Direct"
    CONDITIONAL_BM = "ConditionalBM"


@dataclass(frozen=True)
class MCEstimate:
    eps: float
    p_hat: float
    stderr: float
    n_paths: int
    estimator: Estimator
    grid_points: int
    step_h: float
    bias_bound: float = 0.0
    wilson: tuple[float, float] | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.eps > 0.0:
            raise ValueError("eps must be > 0")
        if not 0.0 <= self.p_hat <= 1.0:
            raise ValueError(f"p_hat outside [0,1]: {self.p_hat}")
        if not self.stderr >= 0.0:
            raise ValueError("stderr must be >= 0")
        if self.n_paths < 1 or self.grid_points < 1 or not self.step_h > 0.0:
            raise ValueError("n_paths, grid_points and step_h must be positive")
        object.__setattr__(self, "estimator", Estimator(self.estimator))


def wilson_interval(p: float, n: float, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval; ``n`` may be an effective sample size."""
    if n <= 0:
        raise ValueError("n must be positive")
    z2 = z * z
    den = 1.0 + z2 / n
    mid = (p + z2 / (2.0 * n)) / den
    half = z * math.sqrt(max(p * (1.0 - p), 0.0) / n + z2 / (4.0 * n * n)) / den
    lo = 0.0 if p <= 0.0 else max(0.0, mid - half)
    hi = 1.0 if p >= 1.0 else min(1.0, mid + half)
    return lo, hi


def _wilson_for(p: float, se: float, n: int):
    if p >= WILSON_BELOW:
        return None
    if se > 0.0 and 0.0 < p < 1.0:
        n_eff = p * (1.0 - p) / (se * se)
    else:
        n_eff = n
    return wilson_interval(p, n_eff)


def _check_eps(eps_list) -> np.ndarray:
    eps = np.asarray(list(eps_list), dtype=float)
    if eps.size == 0:
        raise ValueError("eps_list must be nonempty")
    if not np.all(eps > 0.0) or not np.all(np.isfinite(eps)):
        raise ValueError("eps values must be finite and > 0")
    return eps


# ---------------------------------------------------------------------------
# Stratified E(T) machinery
# ---------------------------------------------------------------------------

def stratified_uniforms(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(u, w): one uniform per stratum and the stratum widths (sum 1)."""
    if n < 2:
        edges = np.array([0.0, 1.0])
    else:
        n_log = max(1, n // 4)
        n_uni = n - n_log
        uni = np.arange(1, n_uni + 1, dtype=float) / n_uni
        geo = np.geomspace(_LOG_FLOOR, uni[0], n_log + 1)[:-1]
        edges = np.concatenate([[0.0], geo, uni])
    lo, w = edges[:-1], np.diff(edges)
    u = lo + w * rng.random(w.size)
    return np.minimum(u, np.nextafter(edges[1:], 0.0)), w


def _stratified_E(tc: TimeChangeSpec, T: float, n: int, rng, step_h: float | None):
    """Draws of E(T) (grid-rounded, or continuous levels if step_h is None)
    for one chunk, with weights."""
    u1, w = stratified_uniforms(n, rng)
    U = np.empty((u1.size, tc.sigma))
    U[:, 0] = u1
    if tc.sigma > 1:
        U[:, 1:] = rng.random((u1.size, tc.sigma - 1))
    if step_h is None:
        levels = np.zeros(u1.size)
        for j, (sub, c) in enumerate(tc.components):
            levels += c * passage_table(sub, T).ppf(U[:, j])
        return levels, w, U
    return sample_E_T(tc, T, step_h, uniforms=U), w, U


def _chunked_mean(
    tc: TimeChangeSpec,
    T: float,
    n_paths: int,
    step_h: float | None,
    rng,
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    threads: int | None,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Mean and SE of ``fn`` (rows = outputs, columns = draws) over a
    stratified design. ``fn(E, U)`` must return shape (k, n)."""
    for sub, _ in tc.components:
        passage_table(sub, T)  # build once, outside the pool
    sizes = chunk_sizes(n_paths)
    entropy = root_entropy(rng)

    def work(i, size, g):
        E, w, U = _stratified_E(tc, T, size, g, step_h)
        vals = np.atleast_2d(fn(E, U))
        return np.array([math.fsum(v) for v in vals * w])

    rows = np.asarray(run_chunks(work, sizes, entropy, threads))
    K = rows.shape[0]
    mean = fsum_rows(rows) / K
    dev = (rows - mean) ** 2
    se = np.sqrt(fsum_rows(dev) / (K * (K - 1))) if K > 1 else np.zeros_like(mean)
    return mean, se, K


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def estimate_conditional_bm(
    tc: TimeChangeSpec,
    T: float,
    eps_list: Sequence[float],
    n_paths: int,
    step_h: float,
    rng,
    threads: int | None = None,
) -> list[MCEstimate]:
    """P(sup_{t<=T} |W(E(t))| <= eps) as the average of the exact
    conditional probability S(eps / sqrt(E(T))), one E-sample set for all eps.

    ``bias_bound`` bounds the effect of grid rounding: the continuous E(T)
    lies in [E_h - sum(c) h, E_h], and S is monotone.
    """
    eps = _check_eps(eps_list)
    if n_paths < 100:
        raise ValueError("n_paths must be >= 100")
    if not T > 0.0 or not step_h > 0.0:
        raise ValueError("T and step_h must be > 0")
    shift = step_h * sum(c for _, c in tc.components)

    def fn(E, U):
        # E(T) = 0 cannot occur on the grid (E_h >= h); guard anyway: S(inf) = 1
        with np.errstate(divide="ignore"):
            inv = np.where(E > 0.0, 1.0 / np.sqrt(E), np.inf)
            lo = E - shift
            inv_lo = np.where(lo > 0.0, 1.0 / np.sqrt(np.maximum(lo, 0.0)), np.inf)
        f = chung_probability(eps[:, None] * inv[None, :])
        f_lo = chung_probability(eps[:, None] * inv_lo[None, :])
        return np.vstack([f, f_lo - f])

    mean, se, _ = _chunked_mean(tc, T, n_paths, step_h, rng, fn, threads)
    k = eps.size
    out = []
    for i, e in enumerate(eps):
        p = min(max(float(mean[i]), 0.0), 1.0)
        s = float(se[i])
        out.append(
            MCEstimate(
                eps=float(e), p_hat=p, stderr=s, n_paths=int(n_paths),
                estimator=Estimator.CONDITIONAL_BM, grid_points=1, step_h=float(step_h),
                bias_bound=max(float(mean[k + i]), 0.0), wilson=_wilson_for(p, s, n_paths),
            )
        )
    return out


def _on_lattice(E: np.ndarray, h: float) -> np.ndarray | None:
    k = np.rint(E / h)
    if np.all(np.abs(E - k * h) <= 1e-9 * h * np.maximum(k, 1.0)):
        return k.astype(np.int64)
    return None


_GRID_FAMILIES = (OuterFamily.BM, OuterFamily.FBM, OuterFamily.SYM_STABLE)


def _outer_at(outer: OuterSpec, E: np.ndarray, h: float, rng) -> np.ndarray:
    """X(E(t_i)) for one replicate; lattice E-values use the grid sampler."""
    k = _on_lattice(E, h) if outer.family in _GRID_FAMILIES else None
    if k is not None:
        x = sample_grid(outer, int(k.max()), h, rng)
        return x[k]
    uniq, inv = np.unique(E, return_inverse=True)
    if uniq.size > MAX_DENSE_POINTS:
        raise CovarianceSizeError(f"{uniq.size} distinct E-values exceed the dense cap {MAX_DENSE_POINTS}")
    return sample_at_times(outer, uniq, rng)[inv]


def _unit_grid_sup(outer: OuterSpec, n_grid: int, rng) -> float:
    """max_k |X(k / (n_grid - 1))|, k = 0..n_grid-1."""
    if outer.family in _GRID_FAMILIES:
        x = sample_grid(outer, n_grid - 1, 1.0 / (n_grid - 1), rng)
    else:
        x = sample_at_times(outer, np.linspace(0.0, 1.0, n_grid)[1:], rng)
    return float(np.max(np.abs(x)))


def estimate_direct(
    outer: OuterSpec,
    tc: TimeChangeSpec,
    T: float,
    eps_list: Sequence[float],
    n_paths: int,
    n_grid: int,
    step_h: float,
    rng,
    threads: int | None = None,
    clock: str = "outer",
) -> list[MCEstimate]:
    """Indicator estimate of P(sup_{t<=T} |X(E(t))| <= eps) from a grid sup.

    ``clock="outer"`` (default): E is continuous, nondecreasing and starts
    at 0, so the sup over [0, T] equals the sup of |X| over [0, E(T)]. X is
    taken at n_grid uniform points of [0, E(T)], drawn as E(T)^H times a
    unit-interval path (self-similarity), with E(T) from the grid-rounded
    exact sampler.

    ``clock="time"``: E(t_i) at n_grid uniform t_i in [0, T] from simulated
    paths, X at the distinct E-values. Small balls occur when E rises early
    and then stalls, so this grid sees few E-values exactly when it
    matters and the bias is large unless n_grid is huge.

    Both are biased upward by the finite grid.
    """
    eps = _check_eps(eps_list)
    if n_grid < 64:
        raise ValueError("n_grid must be >= 64")
    if n_grid > MAX_DENSE_POINTS:
        raise CovarianceSizeError(f"n_grid={n_grid} exceeds the dense cap {MAX_DENSE_POINTS}")
    if n_paths < 1 or not T > 0.0 or not step_h > 0.0:
        raise ValueError("n_paths, T and step_h must be positive")
    if clock not in ("outer", "time"):
        raise ValueError("clock must be 'outer' or 'time'")
    sizes = chunk_sizes(n_paths)
    H = outer.H
    times = np.linspace(0.0, T, n_grid)
    if clock == "outer":
        for sub, _ in tc.components:
            passage_table(sub, T)

    def work(i, size, g):
        hits = np.zeros(eps.size)
        if clock == "outer":
            E = np.atleast_1d(sample_E_T(tc, T, step_h, g, size=size))
            for e_T in E:
                sup = e_T**H * _unit_grid_sup(outer, n_grid, g)
                hits += sup <= eps
            return hits
        for _ in range(size):
            E = sample_E_at(tc, times, step_h, g).e_values
            sup = float(np.max(np.abs(_outer_at(outer, E, step_h, g))))
            hits += sup <= eps
        return hits

    counts = fsum_rows(run_chunks(work, sizes, root_entropy(rng), threads))
    out = []
    for e, c in zip(eps, counts):
        p = float(c) / n_paths
        s_ = math.sqrt(p * (1.0 - p) / n_paths)
        out.append(
            MCEstimate(
                eps=float(e), p_hat=p, stderr=s_, n_paths=int(n_paths), estimator=Estimator.DIRECT,
                grid_points=int(n_grid), step_h=float(step_h), wilson=_wilson_for(p, s_, n_paths),
                extra={"clock": clock},
            )
        )
    return out


def weak_order_diagnostic(
    tc: TimeChangeSpec,
    T: float,
    theta: float,
    sigma: float,
    a_list: Sequence[float],
    n_paths: int,
    step_h: float,
    rng,
    threads: int | None = None,
) -> list[tuple[float, float, float]]:
    """(a, a^(theta sigma) E[exp(-a E(T)^(1/theta))], stderr) per a.

    E is nondecreasing with E(0) = 0, so the sup of |E(t) - E(s)| over
    [0, T]^2 is E(T). Requires a h^(1/theta) <= 0.01: grid values satisfy
    E_h >= h, so larger products would bias the small-E mass.
    """
    if not theta > 0.0 or not sigma > 0.0:
        raise ValueError("theta and sigma must be > 0")
    if not T > 0.0 or not step_h > 0.0:
        raise ValueError("T and step_h must be > 0")
    a = np.asarray(list(a_list), dtype=float)
    if a.size == 0 or not np.all(a > 0.0):
        raise ValueError("a_list must be nonempty and positive")
    bad = a * step_h ** (1.0 / theta) > 0.01
    if np.any(bad):
        raise PreconditionError(
            f"a * step_h^(1/theta) must be <= 0.01; violated for a={a[bad].tolist()} at step_h={step_h}"
        )
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    scale = a ** (theta * sigma)

    def fn(E, U):
        return scale[:, None] * np.exp(-a[:, None] * E[None, :] ** (1.0 / theta))

    mean, se, _ = _chunked_mean(tc, T, n_paths, step_h, rng, fn, threads)
    return [(float(x), float(m), float(s)) for x, m, s in zip(a, mean, se)]


def tauberian_diagnostic(
    tc: TimeChangeSpec,
    T: float,
    a_list: Sequence[float],
    n_paths: int,
    step_h: float,
    rng,
    threads: int | None = None,
) -> list[tuple[float, float, float]]:
    """(a, a E[exp(-a E(T))], stderr); requires a step_h <= 0.01."""
    return weak_order_diagnostic(tc, T, 1.0, 1.0, a_list, n_paths, step_h, rng, threads)


def prop_e_check(
    spec: SubordinatorSpec,
    T: float,
    eps_list: Sequence[float],
    n_paths: int,
    rng,
    threads: int | None = None,
) -> list[tuple[float, float, float]]:
    """(eps, P(D(eps) >= T) / eps, stderr) from one exact increment per
    replicate; P(D(eps) >= T) = P(E(T) <= eps)."""
    eps = _check_eps(eps_list)
    if not T > 0.0 or n_paths < 1:
        raise ValueError("T and n_paths must be positive")
    sizes = chunk_sizes(n_paths)

    def work(i, size, g):
        return np.array([np.count_nonzero(sample_increment(spec, float(e), g, size=size) >= T) for e in eps], float)

    counts = fsum_rows(run_chunks(work, sizes, root_entropy(rng), threads))
    out = []
    for e, c in zip(eps, counts):
        p = float(c) / n_paths
        out.append((float(e), p / float(e), math.sqrt(p * (1.0 - p) / n_paths) / float(e)))
    return out


def estimate_e_small_ball(
    tc: TimeChangeSpec,
    T: float,
    eps_list: Sequence[float],
    n_paths: int,
    rng,
    threads: int | None = None,
) -> list[tuple[float, float, float]]:
    """(eps, P(E(T) <= eps), stderr) for the continuous time change.

    All components but the last are drawn (the first stratified); the last
    one enters through its exact distribution function, so a single
    component is computed without sampling error.
    """
    eps = _check_eps(eps_list)
    if not T > 0.0 or n_paths < 2:
        raise ValueError("T must be > 0 and n_paths >= 2")
    last, c_last = tc.components[-1]
    if tc.sigma == 1:
        p = np.clip(passage_table(last, T).cdf(eps / c_last), 0.0, 1.0)
        return [(float(e), float(q), 0.0) for e, q in zip(eps, p)]
    head = TimeChangeSpec(tc.components[:-1])

    def fn(E, U):
        rest = (eps[:, None] - E[None, :]) / c_last
        f = np.zeros_like(rest)
        pos = rest > 0.0
        if np.any(pos):
            f[pos] = passage_table(last, T).cdf(rest[pos])
        return f

    passage_table(last, T)
    mean, se, _ = _chunked_mean(head, T, n_paths, None, rng, fn, threads)
    return [(float(e), float(min(max(m, 0.0), 1.0)), float(s)) for e, m, s in zip(eps, mean, se)]


def fit_power_law(points) -> tuple[float, float, float]:
    """Weighted least squares of log p on log eps.

    ``points`` holds (eps, p_hat, stderr) triples or MCEstimate objects.
    Weights are (p/stderr)^2 (delta method on the log); if any stderr is
    zero the fit is unweighted with a residual-based slope error.
    Returns (slope, intercept, slope_stderr).
    """
    rows = [(p.eps, p.p_hat, p.stderr) if isinstance(p, MCEstimate) else tuple(p) for p in points]
    if len(rows) < 3:
        raise DegenerateFitError("need at least 3 points")
    e, p, s = (np.array(c, dtype=float) for c in zip(*rows))
    if np.any(e <= 0.0):
        raise DegenerateFitError("eps must be > 0")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise DegenerateFitError("every p_hat must lie strictly inside (0,1)")
    if np.all(e == e[0]):
        raise DegenerateFitError("all eps are equal")
    x, y = np.log(e), np.log(p)
    weighted = bool(np.all(s > 0.0))
    w = (p / s) ** 2 if weighted else np.ones_like(x)
    W = w.sum()
    xm, ym = (w * x).sum() / W, (w * y).sum() / W
    sxx = (w * (x - xm) ** 2).sum()
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    if weighted:
        slope_se = math.sqrt(1.0 / sxx)
    else:
        resid = y - intercept - slope * x
        dof = x.size - 2
        slope_se = math.sqrt((resid**2).sum() / dof / sxx)
    return float(slope), float(intercept), float(slope_se)
