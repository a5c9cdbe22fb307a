"""Subordinator families (stable, tempered stable, Gamma): Laplace exponents,
Levy tails, exact increment sampling and the passage probability
P(D(x) > T) that drives exact first-passage sampling.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import special

from .specfun import upper_incomplete_gamma

__all__ = [
    "Family",
    "SubordinatorSpec",
    "MonotonePath",
    "laplace_exponent",
    "levy_tail",
    "mean_rate",
    "sample_increment",
    "sample_path",
    "passage_probability",
    "parse_subordinator",
]

MAX_REJECTION_ROUNDS = 1_000_000


class Family(str, Enum):
    STABLE = "stable"
    TEMPERED = "tempered"
    GAMMA = "gamma"


@dataclass(frozen=True)
class SubordinatorSpec:
    """Parametric subordinator. Use the ``stable``/``tempered``/``gamma``
    constructors; ``drift`` is the linear coefficient of the Laplace
    exponent (kept separate from the Gamma rate ``b``)."""

    family: Family
    beta: float | None = None
    lam: float | None = None
    c: float | None = None
    b: float | None = None
    drift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family in (Family.STABLE, Family.TEMPERED):
            if self.beta is None or not 0.0 < self.beta < 1.0:
                raise ValueError(f"beta must lie in (0,1), got {self.beta}")
        if self.family is Family.TEMPERED and (self.lam is None or not self.lam > 0.0):
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.family is Family.GAMMA:
            if self.c is None or not self.c > 0.0:
                raise ValueError(f"c must be > 0, got {self.c}")
            if self.b is None or not self.b > 0.0:
                raise ValueError(f"b must be > 0, got {self.b}")
        if not self.drift >= 0.0:
            raise ValueError(f"drift must be >= 0, got {self.drift}")

    @classmethod
    def stable(cls, beta: float, drift: float = 0.0) -> "SubordinatorSpec":
        return cls(Family.STABLE, beta=float(beta), drift=float(drift))

    @classmethod
    def tempered(cls, beta: float, lam: float, drift: float = 0.0) -> "SubordinatorSpec":
        return cls(Family.TEMPERED, beta=float(beta), lam=float(lam), drift=float(drift))

    @classmethod
    def gamma(cls, c: float, b: float, drift: float = 0.0) -> "SubordinatorSpec":
        return cls(Family.GAMMA, c=float(c), b=float(b), drift=float(drift))

    def label(self) -> str:
        if self.family is Family.STABLE:
            s = f"stable:beta={self.beta:g}"
        elif self.family is Family.TEMPERED:
            s = f"tempered:beta={self.beta:g},lambda={self.lam:g}"
        else:
            s = f"gamma:c={self.c:g},b={self.b:g}"
        if self.drift:
            s += f",drift={self.drift:g}"
        return s

    def __str__(self) -> str:
        return self.label()


@dataclass(frozen=True)
class MonotonePath:
    """Subordinator sampled on the grid 0, h, 2h, ...; ``values[k]`` is D(k h)."""

    step_h: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not self.step_h > 0.0:
            raise ValueError("step_h must be > 0")
        if v.ndim != 1 or v.size < 1:
            raise ValueError("values must be a nonempty 1-d sequence")
        if v[0] != 0.0:
            raise ValueError("values[0] must be 0")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        if v.size > 1 and not np.all(np.diff(v) > 0.0):
            raise ValueError("path values must be strictly increasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def u_max(self) -> float:
        return self.step_h * (self.values.size - 1)

    def __len__(self) -> int:
        return self.values.size


# ---------------------------------------------------------------------------
# Laplace exponent and Levy tail
# ---------------------------------------------------------------------------

def _psi(spec: SubordinatorSpec, s):
    """Laplace exponent without domain checks; accepts complex arrays."""
    if spec.family is Family.STABLE:
        out = s**spec.beta
    elif spec.family is Family.TEMPERED:
        out = (s + spec.lam) ** spec.beta - spec.lam**spec.beta
    else:
        out = spec.c * np.log1p(s / spec.b)
    return out + spec.drift * s


def laplace_exponent(spec: SubordinatorSpec, s: float) -> float:
    """psi(s) with E exp(-s D(t)) = exp(-t psi(s)), drift included."""
    s = float(s)
    if not s > 0.0:
        raise ValueError(f"s must be > 0, got {s}")
    return float(_psi(spec, s))


def levy_tail(spec: SubordinatorSpec, T: float) -> float:
    """nu(T, inf), the Levy measure of jumps larger than T."""
    T = float(T)
    if not T > 0.0:
        raise ValueError(f"T must be > 0, got {T}")
    if spec.family is Family.STABLE:
        return T ** (-spec.beta) / math.gamma(1.0 - spec.beta)
    if spec.family is Family.GAMMA:
        return spec.c * upper_incomplete_gamma(0.0, spec.b * T)
    beta, lam = spec.beta, spec.lam
    num = math.exp(-lam * T) * T ** (-beta) - lam**beta * upper_incomplete_gamma(1.0 - beta, lam * T)
    return num / math.gamma(1.0 - beta)


def mean_rate(spec: SubordinatorSpec) -> float:
    """E D(1) = psi'(0+); infinite for the stable family."""
    if spec.family is Family.STABLE:
        return math.inf
    if spec.family is Family.TEMPERED:
        return spec.beta * spec.lam ** (spec.beta - 1.0) + spec.drift
    return spec.c / spec.b + spec.drift


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _zolotarev(beta: float, u):
    # A(u) = (sin(beta u)/sin u)^(1/(1-beta)) sin((1-beta) u)/sin(beta u)
    sb = np.sin(beta * u)
    return (sb / np.sin(u)) ** (1.0 / (1.0 - beta)) * np.sin((1.0 - beta) * u) / sb


def _standard_stable(beta: float, size, rng: np.random.Generator):
    """Kanter's representation: (A(U)/W)^((1-beta)/beta) has Laplace
    transform exp(-s^beta)."""
    u = rng.uniform(0.0, math.pi, size)
    w = rng.standard_exponential(size)
    return (_zolotarev(beta, u) / w) ** ((1.0 - beta) / beta)


def _tempered_stable(beta: float, lam: float, dt: float, size, rng: np.random.Generator):
    scale = dt ** (1.0 / beta)
    out = np.empty(size if size is not None else (), dtype=float)
    flat = out.reshape(-1)
    todo = np.arange(flat.size)
    for _ in range(MAX_REJECTION_ROUNDS):
        x = scale * _standard_stable(beta, todo.size, rng)
        ok = rng.uniform(size=todo.size) < np.exp(-lam * x)
        flat[todo[ok]] = x[ok]
        todo = todo[~ok]
        if todo.size == 0:
            return out if size is not None else float(out)
    raise RuntimeError("tempered stable rejection sampler exceeded its retry cap")


_TINY = np.finfo(float).smallest_subnormal


def sample_increment(spec: SubordinatorSpec, dt: float, rng: np.random.Generator, size=None):
    """Exact draw(s) from the law of D(dt) (drift included)."""
    dt = float(dt)
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if spec.family is Family.STABLE:
        x = dt ** (1.0 / spec.beta) * _standard_stable(spec.beta, size, rng)
    elif spec.family is Family.TEMPERED:
        x = _tempered_stable(spec.beta, spec.lam, dt, size, rng)
    else:
        x = rng.gamma(spec.c * dt, 1.0 / spec.b, size)
    # very small Gamma shapes underflow; the true draw is positive
    x = np.maximum(x, _TINY) + spec.drift * dt
    return float(x) if size is None else x


def _strictify(values: np.ndarray) -> np.ndarray:
    # cumulative sums can stall when an increment is below half an ulp;
    # bump such entries to the next representable value
    bad = np.flatnonzero(np.diff(values) <= 0.0)
    if bad.size == 0:
        return values
    for i in range(bad[0] + 1, values.size):
        if values[i] <= values[i - 1]:
            values[i] = np.nextafter(values[i - 1], np.inf)
    return values


def sample_path(spec: SubordinatorSpec, u_max: float, step_h: float, rng: np.random.Generator) -> MonotonePath:
    """D(k h) for k = 0..ceil(u_max/h), built from independent exact increments."""
    if not 0.0 < step_h <= u_max:
        raise ValueError("need 0 < step_h <= u_max")
    n = int(math.ceil(u_max / step_h - 1e-12))
    try:
        inc = sample_increment(spec, step_h, rng, size=n)
        values = np.empty(n + 1)
    except MemoryError as exc:  # pragma: no cover
        raise MemoryError(f"cannot allocate a path of {n + 1} points") from exc
    values[0] = 0.0
    np.cumsum(inc, out=values[1:])
    return MonotonePath(step_h, _strictify(values))


# ---------------------------------------------------------------------------
# Passage probability P(D(x) > T) = P(E(T) <= x)
# ---------------------------------------------------------------------------

_GL8 = np.polynomial.legendre.leggauss(8)
_GL32 = np.polynomial.legendre.leggauss(32)
_GL48 = np.polynomial.legendre.leggauss(48)


def _gl(a, b, rule):
    """Nodes/weights of a Gauss-Legendre rule mapped to [a, b] (broadcast)."""
    x, w = rule
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


_GL12 = np.polynomial.legendre.leggauss(12)
_DROPS = np.array([0.25, 1.0, 3.0, 7.0, 14.0, 25.0, 40.0, 60.0, 750.0])


def _tilt_kernel(w, lt, gamma):
    """w * Phi(w) with Phi(w) = int_0^1 exp(-w v - lt v^-gamma) dv.

    With y = -log v the integrand exp(g(y)), g(y) = -y - w e^-y - lt e^(gamma y),
    is log-concave. Panels end where g has fallen by fixed amounts below its
    maximum (found by bisection), so every panel sees a bounded dynamic range
    whatever the shape; each gets a 12-point Gauss-Legendre rule.
    """
    w = np.asarray(w, dtype=float)
    shape = w.shape
    w = w.reshape(-1)
    lt = np.broadcast_to(np.asarray(lt, dtype=float), shape).reshape(-1)
    out = np.empty_like(w)
    for k in range(0, w.size, _KERNEL_BLOCK):
        sl = slice(k, k + _KERNEL_BLOCK)
        out[sl] = _tilt_kernel_block(w[sl], lt[sl], gamma)
    return out.reshape(shape)


_KERNEL_BLOCK = 4096


def _tilt_kernel_block(w, lt, gamma):
    def g(y):
        return -y - w[:, None] * np.exp(-y) - lt[:, None] * np.exp(gamma * y)

    # mode by Newton from the right of it (g' is decreasing)
    y = np.maximum(np.log(np.maximum(w, 1e-300)) / (1.0 + gamma), 0.0)
    y = np.maximum(y, np.log(np.maximum(1.0 / (gamma * lt), 1.0)) / gamma)
    for _ in range(200):
        ew, eg = w * np.exp(-y), lt * np.exp(gamma * y)
        g1 = -1.0 + ew - gamma * eg
        g2 = -ew - gamma * gamma * eg
        step = g1 / g2
        y = np.maximum(y - step, 0.0)
        if np.all(np.abs(step) < 1e-12 * (1.0 + y)):
            break
    gm = g(y[:, None])[:, 0]
    target = gm[:, None] - _DROPS[None, :]

    # right bracket: g(y + r) < gm - 750 by doubling
    r = np.ones_like(y)
    for _ in range(80):
        low = g((y + r)[:, None])[:, 0] > gm - _DROPS[-1]
        if not np.any(low):
            break
        r = np.where(low, 2.0 * r, r)
    a = np.broadcast_to(y[:, None], target.shape).copy()
    b = np.broadcast_to((y + r)[:, None], target.shape).copy()
    for _ in range(16):
        m = 0.5 * (a + b)
        above = g(m) > target
        a = np.where(above, m, a)
        b = np.where(above, b, m)
    right = np.concatenate([y[:, None], 0.5 * (a + b)], axis=1)

    # left points, clipped at y = 0
    a = np.zeros_like(target)
    b = np.broadcast_to(y[:, None], target.shape).copy()
    for _ in range(16):
        m = 0.5 * (a + b)
        above = g(m) > target
        b = np.where(above, m, b)
        a = np.where(above, a, m)
    left = np.where(g(np.zeros((y.size, 1))) > target, 0.0, 0.5 * (a + b))
    left = np.concatenate([left[:, ::-1], y[:, None]], axis=1)

    edges = np.concatenate([left, right[:, 1:]], axis=1)
    yy, ww = _gl(edges[:, :-1], edges[:, 1:], _GL12)
    total = np.sum(np.exp(g(yy.reshape(y.size, -1))) * ww.reshape(y.size, -1), axis=1)
    return w * total


def _log_zolotarev_gap(beta: float, s):
    """log A(pi - s), accurate for small gaps s."""
    u = np.pi - s
    return (np.log(np.sin(beta * u)) - np.log(np.sin(s))) / (1.0 - beta) + np.log(
        np.sin((1.0 - beta) * u)
    ) - np.log(np.sin(beta * u))


def _zolotarev_mean(beta: float, kappa, kernel, k_inf: float, left_extent=0.0):
    """(1/pi) int_0^pi K(kappa A(u)) du for an array of kappa > 0.

    [0, pi/2] by Gauss-Legendre in u; (pi/2, pi) in l = log(pi - u), where
    A(pi - e^l) ~ (sin(beta pi) e^-l)^(1/(1-beta)). Panels are finest
    (width ~(1-beta)) around the transition kappa A = 1. ``left_extent``
    widens the region on the large-A side for kernels that decay there;
    beyond it K is replaced by its limit k_inf and integrated exactly.
    ``kernel(w, idx)`` receives the index of the kappa each node belongs to.
    """
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    left_extent = np.broadcast_to(np.asarray(left_extent, dtype=float), kappa.shape)
    u_n, u_w = _gl(0.0, 0.5 * np.pi, _GL48)
    a_lo = _zolotarev(beta, u_n)
    l_top = math.log(0.5 * np.pi)
    sbp = math.log(math.sin(beta * math.pi))
    one_b = 1.0 - beta
    w_left = 0.5 * beta
    w_mid = 0.5 * one_b
    w_right = min(0.5, 2.0 * one_b / beta)

    tails = np.zeros(kappa.size)
    ws, wts, idx = [], [], []
    for i, k in enumerate(kappa):
        ws.append(k * a_lo)
        wts.append(u_w)
        idx.append(np.full(u_n.size, i))
        # transition point: log(kappa) + (sbp - l)/(1-beta) = 0
        l_c = sbp + one_b * math.log(k)
        m0, m1 = l_c - 6.0 * one_b, l_c + 6.0 * one_b
        l0 = m0 - left_extent[i]
        r = l_c + 6.0 * one_b + 45.0 * one_b / beta + 2.0
        edges = np.concatenate([
            np.linspace(l0, m0, max(int(math.ceil((m0 - l0) / w_left)), 1) + 1)[:-1],
            np.linspace(m0, m1, 25)[:-1],
            np.linspace(m1, r, max(int(math.ceil((r - m1) / w_right)), 1) + 1),
        ])
        if edges[0] >= l_top:
            edges = np.array([l_top - 1.0, l_top])
        else:
            edges = np.append(edges[edges < l_top], l_top) if edges[-1] > l_top else edges
        tails[i] = k_inf * math.exp(edges[0])
        ll, lw = _gl(edges[:-1], edges[1:], _GL8)
        s = np.exp(ll.ravel())
        ws.append(k * np.exp(_log_zolotarev_gap(beta, s)))
        wts.append(s * lw.ravel())
        idx.append(np.full(s.size, i))
    w_all = np.concatenate(ws)
    idx_all = np.concatenate(idx)
    vals = kernel(w_all, idx_all) * np.concatenate(wts)
    out = np.bincount(idx_all, weights=vals, minlength=kappa.size) + tails
    return out / np.pi


def _stable_like_passage(beta: float, lam: float, level, x):
    """P(D(x) > level) for the driftless stable (lam = 0) or tempered law."""
    kappa = (x / level**beta) ** (1.0 / (1.0 - beta))
    if lam == 0.0:
        return _zolotarev_mean(beta, kappa, lambda w, i: -np.expm1(-w), 1.0)
    gamma = (1.0 - beta) / beta
    lt = lam * level
    # the tilt kernel dies once lt w^gamma is large: l-offset beta log(1/lt)
    extent = beta * np.maximum(np.log(80.0 / lt), 0.0) + 2.0
    val = _zolotarev_mean(beta, kappa, lambda w, i: _tilt_kernel(w, lt[i], gamma), 0.0, extent)
    return np.exp(x * lam**beta) * val


def passage_probability(spec: SubordinatorSpec, T: float, x):
    """P(D(x) > T), which equals P(E(T) <= x) for the inverse E.

    Returns a float for scalar ``x`` and an array of the same shape otherwise.

    Gamma: regularised incomplete gamma. Stable and tempered: Zolotarev's
    integral for the positive stable law, with the exponential tilt
    integrated in closed form over the exponential variable.
    """
    T = float(T)
    if not T > 0.0:
        raise ValueError("T must be > 0")
    x_in = np.asarray(x, dtype=float)
    out = _passage(spec, T, x_in.reshape(-1)).reshape(x_in.shape)
    return float(out) if out.ndim == 0 else out


def _passage(spec: SubordinatorSpec, T: float, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    pos = x > 0.0
    level = T - spec.drift * x
    sure = pos & (level <= 0.0)
    out[sure] = 1.0
    live = pos & ~sure
    if not np.any(live):
        return out
    xl, lv = x[live], level[live]
    if spec.family is Family.GAMMA:
        out[live] = special.gammaincc(spec.c * xl, spec.b * lv)
    elif spec.family is Family.STABLE:
        out[live] = _stable_like_passage(spec.beta, 0.0, lv, xl)
    else:
        out[live] = _stable_like_passage(spec.beta, spec.lam, lv, xl)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Spec strings
# ---------------------------------------------------------------------------

_KEYS = {
    Family.STABLE: {"beta"},
    Family.TEMPERED: {"beta", "lambda"},
    Family.GAMMA: {"c", "b"},
}


def _parse_kv(body: str, text: str) -> dict[str, float]:
    out = {}
    for item in filter(None, (p.strip() for p in body.split(","))):
        m = re.fullmatch(r"([A-Za-z_]\w*)\s*=\s*([-+0-9.eE]+)", item)
        if not m:
            raise ValueError(f"cannot parse {item!r} in {text!r}")
        try:
            out[m.group(1)] = float(m.group(2))
        except ValueError:
            raise ValueError(f"bad number {m.group(2)!r} in {text!r}") from None
    return out


def parse_subordinator(text: str) -> SubordinatorSpec:
    """``stable:beta=0.7``, ``tempered:beta=0.5,lambda=1``, ``gamma:c=1,b=1``,
    each optionally followed by ``,drift=...``."""
    name, _, body = text.strip().partition(":")
    try:
        fam = Family(name.strip().lower())
    except ValueError:
        raise ValueError(f"unknown subordinator family {name!r}") from None
    kv = _parse_kv(body, text)
    drift = kv.pop("drift", 0.0)
    if set(kv) != _KEYS[fam]:
        raise ValueError(f"{fam.value} expects keys {sorted(_KEYS[fam])}, got {sorted(kv)}")
    if fam is Family.STABLE:
        return SubordinatorSpec.stable(kv["beta"], drift)
    if fam is Family.TEMPERED:
        return SubordinatorSpec.tempered(kv["beta"], kv["lambda"], drift)
    return SubordinatorSpec.gamma(kv["c"], kv["b"], drift)
