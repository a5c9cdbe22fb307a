"""Closed-form small-ball constants and exponents, the Laplace transform of
t -> E[exp(-a E(t))], and its numerical inversion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .outer import OuterSpec, self_similarity_index
from .parallel import root_entropy
from .specfun import alternating_cubed_series
from .subordinators import Family, SubordinatorSpec, _psi, laplace_exponent, levy_tail
from .time_change import TimeChangeSpec, passage_table, sample_E_at

__all__ = [
    "Regime",
    "AsymptoticPrediction",
    "NumericalInstabilityError",
    "SERIES_FACTOR",
    "theorem_constant",
    "nane_constant",
    "laplace_transform_rhs",
    "invert_laplace_E",
    "LaplaceReport",
    "verify_laplace_identity",
    "predicted_exponent",
    "mixture_constant",
]

# (32 / pi^3) * sum (-1)^(k-1) / (2k-1)^3, which is 1 up to rounding
SERIES_FACTOR = 32.0 / math.pi**3 * alternating_cubed_series()


class NumericalInstabilityError(ArithmeticError):
    pass


class Regime(str, Enum):
    STRONG = "Strong"
    WEAK_ORDER = "WeakOrder"


@dataclass(frozen=True)
class AsymptoticPrediction:
    exponent: float
    constant: float | None
    regime: Regime
    source: str

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        if self.regime is Regime.STRONG:
            if self.constant is None or not math.isfinite(self.constant) or self.constant < 0.0:
                raise ValueError("a strong prediction needs a finite nonnegative constant")
        elif self.constant is not None:
            raise ValueError("weak-order predictions carry no constant")


def theorem_constant(tc: TimeChangeSpec | SubordinatorSpec, T: float) -> AsymptoticPrediction:
    """P(sup_{t<=T} |W(E(t))| <= eps) ~ constant * eps^2 for a single
    inverse subordinator (scaled by its weight c, the constant is nu/c)."""
    if isinstance(tc, SubordinatorSpec):
        tc = TimeChangeSpec.single(tc)
    if tc.sigma != 1:
        raise ValueError("theorem_constant needs a single component; use mixture_constant")
    if not T > 0.0:
        raise ValueError("T must be > 0")
    spec, c = tc.components[0]
    const = float(levy_tail(spec, T)) / c * SERIES_FACTOR
    return AsymptoticPrediction(2.0, const, Regime.STRONG, "Brownian motion under an inverse subordinator")


def nane_constant(beta: float) -> float:
    """32 Gamma(beta) sin(beta pi) / pi^4 times the alternating cubed series."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0,1)")
    return math.gamma(beta) * math.sin(beta * math.pi) / math.pi * SERIES_FACTOR


def laplace_transform_rhs(spec: SubordinatorSpec, s: float, a: float) -> float:
    """Laplace transform in t of E[exp(-a E(t))]: psi(s) / (s (psi(s) + a))."""
    if not s > 0.0:
        raise ValueError("s must be > 0")
    if not a > 0.0:
        raise ValueError("a must be > 0")
    p = laplace_exponent(spec, s)
    return p / (s * (p + a))


def _talbot(spec: SubordinatorSpec, a: float, t: float, M: int) -> float:
    # fixed Talbot contour s(th) = r th (cot th + i), r = 2M / (5t)
    r = 2.0 * M / (5.0 * t)
    th = np.arange(1, M) * math.pi / M
    cot = 1.0 / np.tan(th)
    s = r * th * (cot + 1j)
    ds = 1.0 + 1j * (th + (th * cot - 1.0) * cot)
    ps = _psi(spec, s)
    F = ps / (s * (ps + a))
    F0 = laplace_transform_rhs(spec, r, a)
    total = 0.5 * F0 * math.exp(r * t) + float(np.sum((np.exp(t * s) * F * ds).real))
    return r / M * total


def invert_laplace_E(spec: SubordinatorSpec, a: float, t: float, M: int = 32) -> float:
    """E[exp(-a E(t))] by fixed-Talbot inversion, checked against M=48."""
    if not a > 0.0 or not t > 0.0:
        raise ValueError("a and t must be > 0")
    v = _talbot(spec, a, t, M)
    check = _talbot(spec, a, t, 48 if M != 48 else 64)
    if not (math.isfinite(v) and abs(v - check) <= 1e-6):
        raise NumericalInstabilityError(f"Talbot estimates disagree: {v} vs {check}")
    return min(max(v, 0.0), 1.0)


GRID_POWER = 3.0


def _exp_trapezoid_weights(t: np.ndarray, dt: np.ndarray, s: float) -> np.ndarray:
    """Weights w with sum w_k g(t_k) = integral of exp(-s t) times the
    piecewise-linear interpolant of g."""
    x = s * dt
    e = np.exp(-s * t[:-1])
    em1 = -np.expm1(-x)
    right = e * (em1 - x * np.exp(-x)) / (s * x)
    left = e * em1 / s - right
    w = np.zeros(t.size)
    w[:-1] += left
    w[1:] += right
    return w


@dataclass(frozen=True)
class LaplaceReport:
    s: float
    a: float
    mc_integral: float
    stderr: float
    rhs: float
    rel_deviation: float
    tail_bound: float
    t_max: float
    n_paths: int


def _g_hat_paths(spec, a, t, n_paths, step_h, rng, method):
    """Per-replicate exp(-a E(t_i)) on the grid t; rows are replicates."""
    tc = TimeChangeSpec.single(spec)
    if method == "paths":
        out = np.empty((n_paths, t.size))
        for i in range(n_paths):
            out[i] = np.exp(-a * sample_E_at(tc, t, step_h, rng).e_values)
        return out
    # common uniforms across t: E(t_i) = quantile_t_i(u) rounded to the grid
    u = rng.random(n_paths)
    out = np.ones((n_paths, t.size))
    for j, tj in enumerate(t):
        if tj == 0.0:
            continue
        if spec.family is Family.STABLE and spec.drift == 0.0:
            level = tj**spec.beta * passage_table(spec, 1.0).ppf(u)
        else:
            level = passage_table(spec, float(tj)).ppf(u)
        E = step_h * (np.floor(level / step_h) + 1.0)
        out[:, j] = np.exp(-a * E)
    return out


def verify_laplace_identity(
    spec: SubordinatorSpec,
    a: float,
    s_list,
    n_paths: int,
    step_h: float,
    t_max: float,
    rng,
    n_t: int = 512,
    method: str = "auto",
) -> list[LaplaceReport]:
    """Compare the integral of exp(-s t) g_hat(t) over [0, t_max] with the
    closed form, where g_hat(t) estimates E[exp(-a E(t))] from shared draws.

    g_hat is interpolated linearly between n_t grid points, graded as
    t_max (k / (n_t - 1))^3, and integrated exactly against exp(-s t)
    (exponentially weighted trapezoid).
    ``method`` is "quantile" (one uniform per replicate shared across t),
    "paths" (simulated subordinator paths) or "auto" (quantile except for
    tempered families, whose tables are slow to build).
    """
    s_arr = np.asarray(list(s_list), dtype=float)
    if s_arr.size == 0 or not np.all(s_arr > 0.0):
        raise ValueError("s values must be > 0")
    if not a > 0.0 or not t_max > 0.0 or not step_h > 0.0:
        raise ValueError("a, t_max and step_h must be > 0")
    if np.any(s_arr * t_max < 20.0):
        raise ValueError(f"need s * t_max >= 20 for every s (t_max={t_max}, s={s_arr.min()})")
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    if method == "auto":
        method = "paths" if spec.family is Family.TEMPERED else "quantile"
    if method not in ("paths", "quantile"):
        raise ValueError(f"unknown method {method!r}")
    gen = np.random.Generator(np.random.PCG64(root_entropy(rng)))
    # graded grid: g(t) has an infinite slope at t = 0 (a power or
    # logarithmic cusp), so cells shrink like k^3 near the origin
    t = t_max * (np.arange(n_t, dtype=float) / (n_t - 1)) ** GRID_POWER
    G = _g_hat_paths(spec, a, t, n_paths, step_h, gen, method)
    dt = np.diff(t)
    reports = []
    for s in s_arr:
        wts = _exp_trapezoid_weights(t, dt, float(s))
        per = G @ wts
        est = math.fsum(per) / n_paths
        se = float(np.std(per, ddof=1) / math.sqrt(n_paths))
        rhs = laplace_transform_rhs(spec, float(s), a)
        reports.append(
            LaplaceReport(
                s=float(s), a=float(a), mc_integral=est, stderr=se, rhs=rhs,
                rel_deviation=abs(est - rhs) / rhs, tail_bound=math.exp(-s * t_max) / float(s),
                t_max=float(t_max), n_paths=int(n_paths),
            )
        )
    return reports


def predicted_exponent(outer: OuterSpec, tc_sigma: float) -> float:
    """sigma / H: the eps-exponent of P(sup |X(E(t))| <= eps) in weak order."""
    if not tc_sigma > 0.0:
        raise ValueError("tc_sigma must be > 0")
    return tc_sigma / self_similarity_index(outer)


def mixture_constant(tc: TimeChangeSpec, T: float) -> AsymptoticPrediction:
    """P(E(T) <= eps) ~ (1/m!) prod(nu_j(T, inf) / c_j) eps^m."""
    if not T > 0.0:
        raise ValueError("T must be > 0")
    m = tc.sigma
    prod = 1.0
    for spec, c in tc.components:
        prod *= float(levy_tail(spec, T)) / c
    return AsymptoticPrediction(float(m), prod / math.factorial(m), Regime.STRONG, "sum of independent inverse subordinators")
