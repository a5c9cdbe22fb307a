"""Scalar special functions: Mittag-Leffler on the negative axis, the upper
incomplete gamma function for nonpositive order, and the two alternating
series that appear in Brownian small-ball formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

__all__ = [
    "SeriesResult",
    "mittag_leffler",
    "upper_incomplete_gamma",
    "chung_series",
    "chung_probability",
    "alternating_cubed_series",
    "alternating_cubed_partial",
]

_PI2_8 = math.pi**2 / 8.0


@dataclass(frozen=True)
class SeriesResult:
    value: float
    terms_used: int
    truncation_bound: float

    def __post_init__(self):
        if self.terms_used < 1:
            raise ValueError("terms_used must be >= 1")
        if not self.truncation_bound >= 0.0:
            raise ValueError("truncation_bound must be nonnegative")


# ---------------------------------------------------------------------------
# Mittag-Leffler
# ---------------------------------------------------------------------------

def _ml_series(beta: float, x: float) -> float:
    # E_beta(-x) for x <= 1: alternating, terms decrease monotonically
    total = 1.0
    n = 1
    logx = math.log(x) if x > 0 else -math.inf
    while True:
        term = math.exp(n * logx - special.gammaln(n * beta + 1.0))
        total += -term if n % 2 else term
        if term < 1e-18 * abs(total) or n > 400:
            return total
        n += 1


def _ml_asymptotic(beta: float, x: float, max_terms: int = 10):
    """Algebraic expansion -sum_k (-x)^-k / Gamma(1 - beta k), with an
    error estimate given by the first omitted term."""
    total = 0.0
    last = math.inf
    for k in range(1, max_terms + 1):
        term = (-1.0) ** (k + 1) * x ** (-k) * special.rgamma(1.0 - beta * k)
        if abs(term) > last and term != 0.0:
            return total, abs(term)
        total += term
        if term != 0.0:
            last = abs(term)
    nxt = x ** (-(max_terms + 1)) * abs(special.rgamma(1.0 - beta * (max_terms + 1)))
    return total, nxt


def _ml_integral(beta: float, x: float) -> float:
    # Complete-monotonicity representation of E_beta(-x), 0 < beta < 1,
    # after the substitution v = (r x^(1/beta))^beta.
    sb, cb = math.sin(beta * math.pi), math.cos(beta * math.pi)
    inv = 1.0 / beta

    def f(v):
        return math.exp(-v**inv) * x / (v * v + 2.0 * v * x * cb + x * x)

    # integrand decays like exp(-v^(1/beta)); cut where it is below 1e-300
    vmax = 700.0**beta
    peak = max(-x * cb, 0.0)
    pts = [p for p in (0.5 * peak, peak, 1.5 * peak) if 0.0 < p < vmax]
    val, _ = integrate.quad(f, 0.0, vmax, points=pts or None, epsabs=0.0, epsrel=1e-13, limit=400)
    return sb / (beta * math.pi) * val


def mittag_leffler(beta: float, z: float) -> float:
    """E_beta(z) = sum_n z^n / Gamma(n beta + 1) for 0 < beta <= 1, z <= 0.

    Power series near the origin, the algebraic asymptotic expansion far out
    (used only when its first omitted term is below 1e-14 relative), and an
    integral representation in between.
    """
    beta = float(beta)
    z = float(z)
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0,1], got {beta}")
    if not z <= 0.0:
        raise ValueError(f"z must be <= 0, got {z}")
    if z == 0.0:
        return 1.0
    if beta == 1.0:
        return math.exp(z)
    x = -z
    if x <= 1.0:
        return _ml_series(beta, x)
    if x > 5.0:
        val, err = _ml_asymptotic(beta, x)
        if val > 0.0 and err < 1e-14 * val:
            return val
    return _ml_integral(beta, x)


# ---------------------------------------------------------------------------
# Upper incomplete gamma
# ---------------------------------------------------------------------------

def _gamma_cf(z: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Gamma(z, x)
    tiny = 1e-300
    b = x + 1.0 - z
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - z)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    else:  # pragma: no cover
        raise ArithmeticError(f"continued fraction for Gamma({z}, {x}) did not converge")
    return math.exp(-x + z * math.log(x)) * h


def upper_incomplete_gamma(z: float, x: float) -> float:
    """Gamma(z, x) = int_x^inf e^-u u^(z-1) du, for any real z and x > 0."""
    z = float(z)
    x = float(x)
    if not x > 0.0:
        raise ValueError(f"x must be > 0, got {x}")
    if z > 0.0:
        return float(special.gamma(z) * special.gammaincc(z, x))
    if z == 0.0:
        return float(special.exp1(x))
    if x >= 1.5:
        return _gamma_cf(z, x)
    # lift the order into [0, 1] and walk back down with
    # Gamma(a-1, x) = (Gamma(a, x) - x^(a-1) e^-x) / (a-1)
    n = math.ceil(-z)
    a = z + n
    val = upper_incomplete_gamma(a, x)
    ex = math.exp(-x)
    for _ in range(n):
        val = (val - x ** (a - 1.0) * ex) / (a - 1.0)
        a -= 1.0
    return val


# ---------------------------------------------------------------------------
# Brownian sup-norm series
# ---------------------------------------------------------------------------

_CHUNG_SWITCH = 1.5


def _normal_sf(x):
    return 0.5 * special.erfc(np.asarray(x) / math.sqrt(2.0))


def chung_series(eps: float) -> SeriesResult:
    """P(sup_{0<=t<=1} |W(t)| <= eps) as a truncated series.

    For eps <= 1.5 the theta-series in exp(-(2k-1)^2 pi^2 / (8 eps^2)) is
    summed; above that the image (reflection) series
    1 - 4 sum (-1)^(k-1) P(N > (2k-1) eps) converges faster. Both are
    alternating with decreasing terms, so the first omitted term bounds the
    error.
    """
    eps = float(eps)
    if not eps > 0.0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if eps <= _CHUNG_SWITCH:
        c = _PI2_8 / eps**2
        total = 0.0
        k = 1
        while True:
            m = 2 * k - 1
            term = (4.0 / math.pi) / m * math.exp(-m * m * c)
            total += term if k % 2 else -term
            m1 = 2 * k + 1
            nxt = (4.0 / math.pi) / m1 * math.exp(-m1 * m1 * c)
            if nxt < 1e-16 * abs(total) or nxt == 0.0:
                return SeriesResult(min(max(total, 0.0), 1.0), k, nxt)
            k += 1
    tail = 0.0
    k = 1
    while True:
        term = 4.0 * float(_normal_sf((2 * k - 1) * eps))
        tail += term if k % 2 else -term
        nxt = 4.0 * float(_normal_sf((2 * k + 1) * eps))
        if nxt < 1e-16 * abs(1.0 - tail) or nxt == 0.0:
            return SeriesResult(min(max(1.0 - tail, 0.0), 1.0), k, nxt)
        k += 1


def chung_probability(x) -> np.ndarray:
    """Vectorised P(sup_{[0,1]} |W| <= x); x = +inf maps to 1, x <= 0 to 0.

    Fixed term counts: 6 theta terms below the switch point and 4 image
    terms above it keep the omitted tail under 1e-17.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    small = (x > 0.0) & (x <= _CHUNG_SWITCH)
    big = x > _CHUNG_SWITCH
    if small.any():
        xs = x[small]
        c = _PI2_8 / (xs * xs)
        acc = np.zeros_like(xs)
        for k in range(1, 7):
            m = 2 * k - 1
            t = np.exp(-m * m * c) / m
            acc += t if k % 2 else -t
        out[small] = np.clip(4.0 / math.pi * acc, 0.0, 1.0)
    if big.any():
        xb = x[big]
        tail = np.zeros_like(xb)
        for k in range(1, 5):
            t = _normal_sf((2 * k - 1) * xb)
            tail += t if k % 2 else -t
        out[big] = np.clip(1.0 - 4.0 * tail, 0.0, 1.0)
    return out


def alternating_cubed_partial(n_terms: int) -> SeriesResult:
    """Partial sum of sum_{k>=1} (-1)^(k-1) / (2k-1)^3 with the Leibniz bound."""
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    k = np.arange(1, n_terms + 1, dtype=float)
    terms = (-1.0) ** (k - 1) / (2.0 * k - 1.0) ** 3
    value = math.fsum(terms)
    return SeriesResult(value, n_terms, 1.0 / (2.0 * n_terms + 1.0) ** 3)


def alternating_cubed_series() -> float:
    """sum_{k>=1} (-1)^(k-1) / (2k-1)^3, summed with the
    Cohen-Rodriguez Villegas-Zagier acceleration (error ~ 5.8^-n)."""
    n = 30
    d = (3.0 + math.sqrt(8.0)) ** n
    d = (d + 1.0 / d) / 2.0
    b = -1.0
    c = -d
    s = 0.0
    for k in range(n):
        c = b - c
        s += c / (2.0 * k + 1.0) ** 3
        b = (k + n) * (k - n) * b / ((k + 0.5) * (k + 1.0))
    return s / d
