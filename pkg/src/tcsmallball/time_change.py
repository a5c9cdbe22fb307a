"""Inverse subordinators E(t) = inf{u : D(u) > t} and positively weighted
mixtures of independent ones.

Two sampling routes are provided. ``sample_E_at`` simulates each component
path on the operational grid and inverts it at several clock times.
``sample_E_T`` needs E at a single time only; it uses
P(E(T) <= x) = P(D(x) > T) to draw the exact first-passage level by
inversion of a tabulated distribution function, then rounds it up to the
grid exactly as path inversion would.
"""

from __future__ import annotations

import math
import re
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .subordinators import (
    Family,
    MonotonePath,
    SubordinatorSpec,
    levy_tail,
    mean_rate,
    parse_subordinator,
    passage_probability,
    sample_increment,
)

__all__ = [
    "ResourceLimitError",
    "TimeChangeSpec",
    "TimeChangeSample",
    "PassageTable",
    "passage_table",
    "invert_path",
    "sample_E_at",
    "sample_E_T",
    "parse_time_change",
    "DEFAULT_MAX_POINTS",
]

DEFAULT_MAX_POINTS = 100_000_000


class ResourceLimitError(RuntimeError):
    """Raised when a path would need more grid points than allowed."""


@dataclass(frozen=True)
class TimeChangeSpec:
    """E = sum_j c_j E_j with independent inverse subordinators E_j."""

    components: tuple[tuple[SubordinatorSpec, float], ...]

    def __post_init__(self):
        comps = tuple((s, float(c)) for s, c in self.components)
        if not comps:
            raise ValueError("a time change needs at least one component")
        for s, c in comps:
            if not isinstance(s, SubordinatorSpec):
                raise TypeError("components must be (SubordinatorSpec, weight) pairs")
            if not (c > 0.0 and math.isfinite(c)):
                raise ValueError(f"mixture weights must be > 0, got {c}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def single(cls, spec: SubordinatorSpec, weight: float = 1.0) -> "TimeChangeSpec":
        return cls(((spec, weight),))

    @classmethod
    def mixture(cls, pairs) -> "TimeChangeSpec":
        return cls(tuple(pairs))

    @property
    def sigma(self) -> int:
        """Small-ball order of E: the number of components."""
        return len(self.components)

    @property
    def is_single(self) -> bool:
        return len(self.components) == 1 and self.components[0][1] == 1.0

    def label(self) -> str:
        if self.is_single:
            return self.components[0][0].label()
        inner = ";".join(f"{s.label()}*{c:g}" for s, c in self.components)
        return f"mix:[{inner}]"

    def __str__(self) -> str:
        return self.label()


@dataclass(frozen=True)
class TimeChangeSample:
    """E evaluated at sorted clock times. ``sup_M``/``inf_N`` are the max and
    min of E over the times; for nondecreasing E they are E(last) and 0."""

    times: np.ndarray
    e_values: np.ndarray
    grid_h: float
    sup_M: float = field(init=False)
    inf_N: float = field(init=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        e = np.asarray(self.e_values, dtype=float)
        if t.shape != e.shape or t.ndim != 1 or t.size == 0:
            raise ValueError("times and e_values must be nonempty 1-d arrays of equal length")
        if np.any(t < 0.0) or np.any(np.diff(t) < 0.0):
            raise ValueError("times must be sorted and nonnegative")
        if np.any(e < 0.0) or np.any(np.diff(e) < 0.0):
            raise ValueError("e_values must be nonnegative and nondecreasing")
        if t[0] == 0.0 and e[0] != 0.0:
            raise ValueError("E(0) must be 0")
        if not self.grid_h > 0.0:
            raise ValueError("grid_h must be > 0")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "e_values", e)
        object.__setattr__(self, "sup_M", float(e[-1]))
        object.__setattr__(self, "inf_N", float(min(e[0], 0.0)))


# ---------------------------------------------------------------------------
# Path route
# ---------------------------------------------------------------------------

def invert_path(path: MonotonePath, t: float) -> float:
    """h * k* with k* = min{k : D(k h) > t}."""
    t = float(t)
    if t < 0.0:
        raise ValueError("t must be >= 0")
    v = path.values
    if not v[-1] > t:
        raise ValueError(f"path does not cover t={t} (last value {v[-1]})")
    k = int(np.searchsorted(v, t, side="right"))
    return k * path.step_h


def _initial_horizon(spec: SubordinatorSpec, t_max: float) -> float:
    if spec.family is Family.STABLE:
        return 4.0 * (2.0 * t_max) ** spec.beta
    return 4.0 * t_max / mean_rate(spec)


def _covering_values(spec, t_max, step_h, rng, max_points):
    """Grid values D(k h) extended by doubling until the last exceeds t_max."""
    n = max(int(math.ceil(_initial_horizon(spec, t_max) / step_h)), 1)
    parts = [np.zeros(1)]
    last = 0.0
    total = 1
    while True:
        if total + n > max_points:
            raise ResourceLimitError(
                f"path needs more than {max_points} grid points (h={step_h}, t={t_max})"
            )
        inc = sample_increment(spec, step_h, rng, size=n)
        seg = last + np.cumsum(inc)
        parts.append(seg)
        total += n
        last = float(seg[-1])
        if last > t_max:
            return np.concatenate(parts)
        n = total  # doubles the horizon


def sample_E_at(
    spec: TimeChangeSpec,
    times,
    step_h: float,
    rng: np.random.Generator,
    max_points: int = DEFAULT_MAX_POINTS,
) -> TimeChangeSample:
    """One replicate of (E(t_1), ..., E(t_n)) from simulated component paths."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a nonempty 1-d sequence")
    if np.any(times < 0.0) or np.any(np.diff(times) < 0.0):
        raise ValueError("times must be sorted and nonnegative")
    if not step_h > 0.0:
        raise ValueError("step_h must be > 0")
    t_max = float(times[-1])
    e = np.zeros_like(times)
    for sub, c in spec.components:
        if t_max == 0.0:
            break
        v = _covering_values(sub, t_max, step_h, rng, max_points)
        k = np.searchsorted(v, times, side="right")
        k[times == 0.0] = 0
        e += c * step_h * k
    return TimeChangeSample(times, e, step_h)


# ---------------------------------------------------------------------------
# Exact single-time route
# ---------------------------------------------------------------------------

# above this the logit of a computed probability is mostly rounding noise;
# the remaining mass (< 1e-11) is sent to the top of the table
_F_TOP = 1.0 - 1e-11


def _logit(p):
    return np.log(p) - np.log1p(-p)


class PassageTable:
    """Quantile function of E(T) for one subordinator, from a cubic spline of
    log x against logit P(E(T) <= x), refined until the probability error
    implied at interval midpoints is below ``rtol`` relative to the nearer
    tail."""

    def __init__(self, spec: SubordinatorSpec, T: float, rtol: float = 1e-7):
        self.spec = spec
        self.T = float(T)
        F = lambda x: passage_probability(spec, self.T, x)
        nu = levy_tail(spec, self.T)
        x_lo = 1e-14 / nu
        f_lo = F(x_lo)
        while f_lo > 1e-13:
            x_lo *= 1e-2
            f_lo = F(x_lo)
        cap = self.T / spec.drift if spec.drift > 0.0 else math.inf
        x_hi = x_lo
        while True:
            x_hi = min(x_hi * 10.0, cap)
            if x_hi >= cap or F(x_hi) >= 1.0 - 1e-12:
                break
        lx = np.linspace(math.log(x_lo), math.log(x_hi), int(math.ceil(math.log(x_hi / x_lo) / 0.25)) + 1)
        f = F(np.exp(lx))
        # steep upper tails can jump past the cut in one step; bisect in
        # log x until the table reaches 1 - 1e-9
        for _ in range(80):
            top = np.flatnonzero(f < _F_TOP)[-1]
            if f[top] >= 1.0 - 1e-9 or top == lx.size - 1:
                break
            m = 0.5 * (lx[top] + lx[top + 1])
            fm = F(math.exp(m))
            lx = np.insert(lx, top + 1, m)
            f = np.insert(f, top + 1, fm)
        lx, f = self._clean(lx, f)
        check = np.ones(lx.size, bool)  # interval [lx[i], lx[i+1]] still unverified
        for _ in range(40):
            spline = CubicSpline(_logit(f), lx)
            idx = np.flatnonzero(check[:-1])
            if idx.size == 0:
                break
            mid = 0.5 * (lx[idx] + lx[idx + 1])
            fm = F(np.exp(mid))
            ok = (fm > 0.0) & (fm < _F_TOP)
            err = np.zeros_like(mid)
            err[ok] = np.abs(spline(_logit(fm[ok])) - mid[ok])
            # tolerance on the implied probability error, relative to the
            # nearer tail; 1e-13 absolute absorbs the noise of F itself
            slope = (f[idx + 1] - f[idx]) / (lx[idx + 1] - lx[idx])
            fmid = 0.5 * (f[idx] + f[idx + 1])
            bad_here = ok & (err * slope > rtol * np.minimum(fmid, 1.0 - fmid) + 1e-13)
            split = np.zeros(lx.size - 1, bool)
            split[idx[bad_here]] = True
            # split neighbours as well so spacing changes gradually
            split = np.convolve(split.astype(float), np.ones(7), mode="same") > 0.0
            check[:] = False
            if not np.any(split):
                break
            sidx = np.flatnonzero(split)
            smid = 0.5 * (lx[sidx] + lx[sidx + 1])
            known = dict(zip(idx.tolist(), fm.tolist()))
            sf = np.array([known[k] if k in known else np.nan for k in sidx.tolist()])
            need = np.isnan(sf)
            if np.any(need):
                sf[need] = F(np.exp(smid[need]))
            check[sidx] = True
            lx = np.concatenate([lx, smid])
            f = np.concatenate([f, sf])
            check = np.concatenate([check, np.ones(smid.size, bool)])
            order = np.argsort(lx, kind="stable")
            lx, f, check = lx[order], f[order], check[order]
            keep = (f > 0.0) & (f < _F_TOP)
            q = _logit(f)
            keep &= np.concatenate([[True], np.diff(q) > 0.0])
            lx, f, check = lx[keep], f[keep], check[keep]
        else:  # pragma: no cover
            raise ArithmeticError(f"passage table for {spec} at T={T} did not converge")
        lx, f = self._clean(lx, f)
        self._spline = CubicSpline(_logit(f), lx)
        self._x_lo, self._f_lo = math.exp(lx[0]), f[0]
        self._x_hi, self._f_hi = math.exp(lx[-1]), f[-1]
        self.size = lx.size

    @staticmethod
    def _clean(lx, f):
        order = np.argsort(lx)
        lx, f = lx[order], f[order]
        keep = (f > 0.0) & (f < _F_TOP)
        lx, f = lx[keep], f[keep]
        q = _logit(f)
        inc = np.concatenate([[True], np.diff(q) > 0.0])
        while not np.all(inc):
            lx, f, q = lx[inc], f[inc], q[inc]
            inc = np.concatenate([[True], np.diff(q) > 0.0])
        return lx, f

    def ppf(self, u):
        """x with P(E(T) <= x) = u (the continuous first-passage level)."""
        u = np.asarray(u, dtype=float)
        out = np.empty_like(u)
        low = u <= self._f_lo
        high = u >= self._f_hi
        mid = ~(low | high)
        # P(E <= x) ~ nu x near 0: linear below the table
        out[low] = self._x_lo * u[low] / self._f_lo
        out[high] = self._x_hi
        out[mid] = np.exp(self._spline(_logit(u[mid])))
        return out

    def cdf(self, x):
        return passage_probability(self.spec, self.T, x)


_TABLES: dict = {}
_TABLE_LOCK = threading.Lock()


def passage_table(spec: SubordinatorSpec, T: float) -> PassageTable:
    """Cached PassageTable; stable tables are shared across T by scaling."""
    key = (spec, float(T))
    with _TABLE_LOCK:
        tab = _TABLES.get(key)
    if tab is None:
        tab = PassageTable(spec, T)
        with _TABLE_LOCK:
            _TABLES.setdefault(key, tab)
    return tab


def sample_E_T(
    spec: TimeChangeSpec,
    T: float,
    step_h: float,
    rng: np.random.Generator | None = None,
    size: int | None = None,
    uniforms=None,
) -> np.ndarray | float:
    """Draws of the grid-inverted E(T), equal in law to
    ``sample_E_at(spec, [T], step_h, ...)``.

    Each component's continuous level E_j(T) is drawn by inversion and then
    mapped to h * (floor(E_j/h) + 1), the first grid index whose D exceeds T.
    ``uniforms`` (shape (size, m)) may replace the rng, e.g. to stratify.
    """
    T = float(T)
    if not T > 0.0:
        raise ValueError("T must be > 0")
    if not step_h > 0.0:
        raise ValueError("step_h must be > 0")
    m = spec.sigma
    if uniforms is None:
        if rng is None:
            raise ValueError("need rng or uniforms")
        n = 1 if size is None else int(size)
        uniforms = rng.random((n, m))
    uniforms = np.asarray(uniforms, dtype=float)
    if uniforms.ndim == 1 and m == 1:
        uniforms = uniforms[:, None]
    if uniforms.ndim != 2 or uniforms.shape[1] != m:
        raise ValueError(f"uniforms must have shape (n, {m})")
    total = np.zeros(uniforms.shape[0])
    for j, (sub, c) in enumerate(spec.components):
        level = passage_table(sub, T).ppf(uniforms[:, j])
        total += c * step_h * (np.floor(level / step_h) + 1.0)
    if size is None and uniforms.shape[0] == 1:
        return float(total[0])
    return total


# ---------------------------------------------------------------------------
# Spec strings
# ---------------------------------------------------------------------------

def parse_time_change(text: str) -> TimeChangeSpec:
    """A single subordinator string, or ``mix:[spec*weight;spec*weight;...]``."""
    text = text.strip()
    m = re.fullmatch(r"mix\s*:\s*\[(.*)\]", text, flags=re.IGNORECASE | re.DOTALL)
    if not m:
        return TimeChangeSpec.single(parse_subordinator(text))
    pairs = []
    for item in filter(None, (p.strip() for p in m.group(1).split(";"))):
        body, star, w = item.rpartition("*")
        if not star:
            raise ValueError(f"mixture component {item!r} lacks '*weight'")
        try:
            weight = float(w)
        except ValueError:
            raise ValueError(f"bad mixture weight {w!r}") from None
        pairs.append((parse_subordinator(body), weight))
    return TimeChangeSpec.mixture(pairs)
