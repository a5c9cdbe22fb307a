"""Two-sided self-similar outer processes: Brownian motion, fractional
Brownian motion, iterated fBm, symmetric stable and iterated stable Levy
processes. Exact finite-dimensional sampling at sorted time points.
"""

from __future__ import annotations

import math
import re
import threading
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import fft as sfft
from scipy import linalg

__all__ = [
    "OuterFamily",
    "OuterSpec",
    "CovarianceSizeError",
    "self_similarity_index",
    "small_deviation_order",
    "iterated_fbm_constants",
    "sample_at_times",
    "sample_grid",
    "fbm_covariance",
    "parse_outer",
    "MAX_DENSE_POINTS",
]

MAX_DENSE_POINTS = 2**13
_JITTER = 1e-12


class CovarianceSizeError(ValueError):
    """Too many points for dense covariance factorisation."""


class OuterFamily(str, Enum):
    BM = "bm"
    FBM = "fbm"
    ITER_FBM = "iterfbm"
    SYM_STABLE = "stable"
    ITER_STABLE = "iterstable"


@dataclass(frozen=True)
class OuterSpec:
    """``hursts`` holds H for fBm and (H_1, ..., H_n) for iterated fBm, with
    H_1 the innermost; ``alphas`` holds alpha (stable) or (alpha_1, alpha_2)
    for S_{alpha_1}(S_{alpha_2}(t))."""

    family: OuterFamily
    hursts: tuple[float, ...] = ()
    alphas: tuple[float, ...] = ()
    kappa: float = 1.0

    def __post_init__(self):
        fam = OuterFamily(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "hursts", tuple(float(h) for h in self.hursts))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if fam is OuterFamily.FBM and len(self.hursts) != 1:
            raise ValueError("fbm needs exactly one Hurst index")
        if fam is OuterFamily.ITER_FBM and len(self.hursts) < 1:
            raise ValueError("iterfbm needs at least one Hurst index")
        for h in self.hursts:
            if not 0.0 < h < 1.0:
                raise ValueError(f"Hurst index must lie in (0,1), got {h}")
        if fam is OuterFamily.SYM_STABLE and len(self.alphas) != 1:
            raise ValueError("stable needs exactly one alpha")
        if fam is OuterFamily.ITER_STABLE and len(self.alphas) != 2:
            raise ValueError("iterstable needs alpha_1 and alpha_2")
        for a in self.alphas:
            if not 0.0 < a <= 2.0:
                raise ValueError(f"alpha must lie in (0,2], got {a}")
        if not self.kappa > 0.0:
            raise ValueError("kappa must be > 0")

    @classmethod
    def bm(cls) -> "OuterSpec":
        return cls(OuterFamily.BM)

    @classmethod
    def fbm(cls, H: float) -> "OuterSpec":
        return cls(OuterFamily.FBM, hursts=(H,))

    @classmethod
    def iterated_fbm(cls, *H: float) -> "OuterSpec":
        return cls(OuterFamily.ITER_FBM, hursts=tuple(H))

    @classmethod
    def stable(cls, alpha: float, kappa: float = 1.0) -> "OuterSpec":
        return cls(OuterFamily.SYM_STABLE, alphas=(alpha,), kappa=kappa)

    @classmethod
    def iterated_stable(cls, a1: float, a2: float) -> "OuterSpec":
        return cls(OuterFamily.ITER_STABLE, alphas=(a1, a2))

    @property
    def H(self) -> float:
        return self_similarity_index(self)

    @property
    def tau(self) -> float:
        return small_deviation_order(self)

    def label(self) -> str:
        f = self.family
        if f is OuterFamily.BM:
            return "bm"
        if f is OuterFamily.FBM:
            return f"fbm:H={self.hursts[0]:g}"
        if f is OuterFamily.ITER_FBM:
            return "iterfbm:H=" + ",".join(f"{h:g}" for h in self.hursts)
        if f is OuterFamily.SYM_STABLE:
            return f"stable:alpha={self.alphas[0]:g},kappa={self.kappa:g}"
        return f"iterstable:a1={self.alphas[0]:g},a2={self.alphas[1]:g}"

    def __str__(self) -> str:
        return self.label()


# ---------------------------------------------------------------------------
# Indices
# ---------------------------------------------------------------------------

def self_similarity_index(spec: OuterSpec) -> float:
    f = spec.family
    if f is OuterFamily.BM:
        return 0.5
    if f in (OuterFamily.FBM, OuterFamily.ITER_FBM):
        return float(np.prod(spec.hursts))
    if f is OuterFamily.SYM_STABLE:
        return 1.0 / spec.alphas[0]
    return 1.0 / (spec.alphas[0] * spec.alphas[1])


def _tau_iter(hursts) -> float:
    # 1 / sum_i prod_{j >= i} H_j
    suffix = np.cumprod(np.asarray(hursts, dtype=float)[::-1])
    return 1.0 / float(np.sum(suffix))


def small_deviation_order(spec: OuterSpec) -> float:
    f = spec.family
    if f is OuterFamily.BM:
        return 2.0
    if f is OuterFamily.FBM:
        return 1.0 / spec.hursts[0]
    if f is OuterFamily.ITER_FBM:
        return _tau_iter(spec.hursts)
    if f is OuterFamily.SYM_STABLE:
        return spec.alphas[0]
    a1, a2 = spec.alphas
    return a1 * a2 / (1.0 + a2)


def iterated_fbm_constants(H_list, cH_list) -> tuple[float, float]:
    """(tau_n, c_n) for the n-fold iteration, H_list[0] innermost."""
    H = [float(h) for h in H_list]
    cH = [float(c) for c in cH_list]
    if not H or len(H) != len(cH):
        raise ValueError("H_list and cH_list must be nonempty and of equal length")
    if any(not h > 0.0 for h in H):
        raise ValueError("Hurst indices must be positive")
    if any(not c > 0.0 for c in cH):
        raise ValueError("small deviation constants must be positive")
    c = cH[0]
    tau = _tau_iter(H[:1])
    for j in range(1, len(H)):
        inner = c ** (1.0 / tau) * 2.0 * cH[j] / tau
        c = (1.0 + tau) * inner ** (tau / (1.0 + tau))
        tau = _tau_iter(H[: j + 1])
    return tau, c


# ---------------------------------------------------------------------------
# One-sided samplers
# ---------------------------------------------------------------------------

def fbm_covariance(H: float, s, t=None) -> np.ndarray:
    """(|s|^2H + |t|^2H - |s - t|^2H) / 2 as a matrix."""
    s = np.asarray(s, dtype=float)
    t = s if t is None else np.asarray(t, dtype=float)
    h2 = 2.0 * H
    return 0.5 * (np.abs(s)[:, None] ** h2 + np.abs(t)[None, :] ** h2 - np.abs(s[:, None] - t[None, :]) ** h2)


class _FactorCache:
    """Small LRU of Cholesky factors keyed by (H, times); safe for
    concurrent readers."""

    def __init__(self, maxsize: int = 16):
        self._d: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.maxsize = maxsize

    def get(self, H: float, t: np.ndarray) -> np.ndarray:
        key = (H, t.size, hash(t.tobytes()))
        with self._lock:
            hit = self._d.get(key)
            if hit is not None and np.array_equal(hit[0], t):
                self._d.move_to_end(key)
                return hit[1]
        L = _cholesky(fbm_covariance(H, t))
        with self._lock:
            self._d[key] = (t.copy(), L)
            while len(self._d) > self.maxsize:
                self._d.popitem(last=False)
        return L


def _cholesky(C: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(C, lower=True)
    except linalg.LinAlgError:
        pass
    jit = _JITTER * max(float(np.max(np.diag(C))), 1e-300)
    try:
        return linalg.cholesky(C + jit * np.eye(C.shape[0]), lower=True)
    except linalg.LinAlgError as exc:
        raise ArithmeticError("fBm covariance factorisation failed even with jitter") from exc


_FACTORS = _FactorCache()


def _fbm_dense(H: float, t: np.ndarray, rng) -> np.ndarray:
    if t.size > MAX_DENSE_POINTS:
        raise CovarianceSizeError(f"{t.size} points exceed the dense cap {MAX_DENSE_POINTS}")
    L = _FACTORS.get(H, t)
    return L @ rng.standard_normal(t.size)


_EIG_LOCK = threading.Lock()
_EIGS: OrderedDict = OrderedDict()


def _circulant_sqrt(H: float, n: int) -> np.ndarray:
    """sqrt(eigenvalues / 2n) of the circulant embedding of fGn of length n."""
    key = (H, n)
    with _EIG_LOCK:
        hit = _EIGS.get(key)
        if hit is not None:
            _EIGS.move_to_end(key)
            return hit
    k = np.arange(n + 1, dtype=float)
    h2 = 2.0 * H
    gam = 0.5 * ((k + 1.0) ** h2 - 2.0 * k**h2 + np.abs(k - 1.0) ** h2)
    row = np.concatenate([gam, gam[-2:0:-1]])  # length 2n
    lam = sfft.rfft(row).real
    if lam.min() < -1e-10 * lam.max():  # pragma: no cover - fGn embeds for all H
        raise ArithmeticError("circulant embedding is not nonnegative definite")
    root = np.sqrt(np.maximum(lam, 0.0) / row.size)
    with _EIG_LOCK:
        _EIGS[key] = root
        while len(_EIGS) > 32:
            _EIGS.popitem(last=False)
    return root


def _fbm_grid(H: float, n: int, h: float, rng) -> np.ndarray:
    """X(k h), k = 0..n, by circulant embedding of fractional Gaussian noise.

    The embedding is built for a fast FFT length >= n and truncated, which
    leaves the law of the first n increments unchanged.
    """
    out = np.zeros(n + 1)
    if n == 0:
        return out
    m = sfft.next_fast_len(n, real=True)
    root = _circulant_sqrt(H, m)
    full = np.concatenate([root, root[-2:0:-1]])
    z = rng.standard_normal(2 * m) + 1j * rng.standard_normal(2 * m)
    noise = sfft.fft(full * z)[:n].real
    out[1:] = np.cumsum(noise) * h**H
    return out


def _std_sym_stable(alpha: float, size, rng) -> np.ndarray:
    """Chambers-Mallows-Stuck draw with characteristic function exp(-|u|^alpha)."""
    v = rng.uniform(-0.5 * math.pi, 0.5 * math.pi, size)
    if alpha == 1.0:
        return np.tan(v)
    w = rng.standard_exponential(size)
    return (
        np.sin(alpha * v) / np.cos(v) ** (1.0 / alpha)
        * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha)
    )


def _levy_at(alpha: float, kappa: float, t: np.ndarray, rng) -> np.ndarray:
    dt = np.diff(t, prepend=0.0)
    return np.cumsum(kappa * dt ** (1.0 / alpha) * _std_sym_stable(alpha, t.size, rng))


def _one_sided(spec: OuterSpec, t: np.ndarray, rng) -> np.ndarray:
    """Values at sorted, distinct, strictly positive times."""
    f = spec.family
    if t.size == 0:
        return np.zeros(0)
    if f is OuterFamily.BM:
        return np.cumsum(np.sqrt(np.diff(t, prepend=0.0)) * rng.standard_normal(t.size))
    if f is OuterFamily.FBM:
        return _fbm_dense(spec.hursts[0], t, rng)
    if f is OuterFamily.SYM_STABLE:
        return _levy_at(spec.alphas[0], spec.kappa, t, rng)
    if f is OuterFamily.ITER_FBM:
        v = _fbm_dense(spec.hursts[0], t, rng) if spec.hursts[0] != 0.5 else _one_sided(OuterSpec.bm(), t, rng)
        for H in spec.hursts[1:]:
            v = sample_at_times(OuterSpec.fbm(H), v, rng)
        return v
    a1, a2 = spec.alphas
    inner = _levy_at(a2, 1.0, t, rng)
    return sample_at_times(OuterSpec.stable(a1), inner, rng)


def sample_at_times(spec: OuterSpec, times, rng: np.random.Generator) -> np.ndarray:
    """Exact joint draw of X at arbitrary times (any order, negatives allowed).

    Negative times use an independent copy run on |t|; time 0 maps to 0.
    Times are sorted and deduplicated internally and the result is
    returned in the caller's order.
    """
    times = np.asarray(times, dtype=float)
    if not np.all(np.isfinite(times)):
        raise ValueError("times must be finite")
    flat = times.reshape(-1)
    uniq, inv = np.unique(flat, return_inverse=True)
    vals = np.zeros(uniq.size)
    pos = uniq > 0.0
    neg = uniq < 0.0
    vals[pos] = _one_sided(spec, uniq[pos], rng)
    if np.any(neg):
        tn = -uniq[neg][::-1]
        vals[np.flatnonzero(neg)[::-1]] = _one_sided(spec, tn, rng)
    return vals[inv].reshape(times.shape)


def sample_grid(spec: OuterSpec, n: int, h: float, rng: np.random.Generator) -> np.ndarray:
    """X(k h) for k = 0..n on the nonnegative side. fBm uses circulant
    embedding; iterated families sample the inner process on the grid and
    the outer one at the resulting values."""
    if n < 0 or not h > 0.0:
        raise ValueError("need n >= 0 and h > 0")
    f = spec.family
    if f is OuterFamily.FBM:
        return _fbm_grid(spec.hursts[0], n, h, rng)
    if f is OuterFamily.ITER_FBM:
        v = _fbm_grid(spec.hursts[0], n, h, rng)
        for H in spec.hursts[1:]:
            v = sample_at_times(OuterSpec.fbm(H), v, rng)
        return v
    t = h * np.arange(n + 1, dtype=float)
    if f is OuterFamily.BM:
        out = np.zeros(n + 1)
        out[1:] = np.cumsum(math.sqrt(h) * rng.standard_normal(n))
        return out
    if f is OuterFamily.SYM_STABLE:
        return np.concatenate([[0.0], _levy_at(spec.alphas[0], spec.kappa, t[1:], rng)])
    a1, a2 = spec.alphas
    inner = np.concatenate([[0.0], _levy_at(a2, 1.0, t[1:], rng)])
    return sample_at_times(OuterSpec.stable(a1), inner, rng)


# ---------------------------------------------------------------------------
# Spec strings
# ---------------------------------------------------------------------------

def _floats(body: str, key: str, text: str) -> list[float]:
    m = re.fullmatch(rf"\s*{key}\s*=\s*(.+)", body, flags=re.IGNORECASE)
    if not m:
        raise ValueError(f"expected '{key}=...' in {text!r}")
    try:
        return [float(v) for v in m.group(1).split(",")]
    except ValueError:
        raise ValueError(f"bad number list in {text!r}") from None


def parse_outer(text: str) -> OuterSpec:
    """``bm``, ``fbm:H=0.75``, ``iterfbm:H=0.5,0.5``,
    ``stable:alpha=1.5,kappa=1.0``, ``iterstable:a1=1.5,a2=1.0``."""
    name, _, body = text.strip().partition(":")
    name = name.strip().lower()
    if name == "bm":
        if body.strip():
            raise ValueError("bm takes no parameters")
        return OuterSpec.bm()
    if name == "fbm":
        hs = _floats(body, "H", text)
        if len(hs) != 1:
            raise ValueError("fbm takes one H")
        return OuterSpec.fbm(hs[0])
    if name == "iterfbm":
        return OuterSpec.iterated_fbm(*_floats(body, "H", text))
    kv = {}
    for item in filter(None, (p.strip() for p in body.split(","))):
        k, eq, v = item.partition("=")
        if not eq:
            raise ValueError(f"cannot parse {item!r} in {text!r}")
        try:
            kv[k.strip().lower()] = float(v)
        except ValueError:
            raise ValueError(f"bad number {v!r} in {text!r}") from None
    if name == "stable":
        if "alpha" not in kv or set(kv) - {"alpha", "kappa"}:
            raise ValueError("stable expects alpha and optional kappa")
        return OuterSpec.stable(kv["alpha"], kv.get("kappa", 1.0))
    if name == "iterstable":
        if set(kv) != {"a1", "a2"}:
            raise ValueError("iterstable expects a1 and a2")
        return OuterSpec.iterated_stable(kv["a1"], kv["a2"])
    raise ValueError(f"unknown outer family {name!r}")
