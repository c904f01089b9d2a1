"""Exponential-law fitting, bootstrap moment ratios and monotone-trend tests."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .kernel import ConfigurationError

MIN_EFFECTIVE = 100
# smallest effective sample for which the p-th moment ratio is reported;
# Var(X^p)/E(X^p)^2 = (2p)!/(p!)^2 - 1 for exponential data
MIN_N_FOR_ORDER = {1: 20, 2: 100, 3: 400, 4: 1600}


class DegenerateFitError(ValueError):
    """Sample carries no information about an exponential scale."""


def _prepare(sample, weights):
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise DegenerateFitError("empty sample")
    if np.any(~np.isfinite(x)) or np.any(x < 0):
        raise ConfigurationError("sample must be finite and nonnegative")
    if weights is None:
        w = np.ones_like(x)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != x.shape or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
            raise ConfigurationError("weights must be nonnegative, finite and match the sample")
        if np.all(w == w[0]):
            w = np.ones_like(x)  # equal weights take the unweighted path exactly
    return x, w


def effective_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / (w @ w))


def _ks_sorted(xs, ws_cum, mean):
    """Sup distance between a weighted ECDF (sorted values, cumulative normalised weights) and Exp(mean)."""
    F = -np.expm1(-xs / mean[..., None])
    lower = np.concatenate([np.zeros(ws_cum.shape[:-1] + (1,)), ws_cum[..., :-1]], axis=-1)
    return np.max(np.maximum(ws_cum - F, F - lower), axis=-1)


def ks_statistic(sample, weights=None, mean: float | None = None) -> float:
    x, w = _prepare(sample, weights)
    order = np.argsort(x, kind="stable")
    xs, wc = x[order], np.cumsum(w[order]) / w.sum()
    m = float(w @ x / w.sum()) if mean is None else float(mean)
    return float(_ks_sorted(xs, wc, np.asarray(m)))


@lru_cache(maxsize=16)
def _null_ks_unweighted(n: int, n_boot: int, seed: int) -> np.ndarray:
    """Bootstrap null of the refit-mean KS statistic; scale-free, so cacheable by n."""
    rng = np.random.default_rng(seed)
    out = np.empty(n_boot)
    wc = np.arange(1, n + 1) / n
    step = max(1, 2_000_000 // n)
    for a in range(0, n_boot, step):
        b = min(a + step, n_boot)
        sims = np.sort(rng.exponential(size=(b - a, n)), axis=1)
        out[a:b] = _ks_sorted(sims, wc, sims.mean(axis=1))
    out.setflags(write=False)
    return out


def _null_ks_weighted(w: np.ndarray, n_boot: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    wn = w / w.sum()
    out = np.empty(n_boot)
    n = w.size
    step = max(1, 2_000_000 // n)
    for a in range(0, n_boot, step):
        b = min(a + step, n_boot)
        sims = rng.exponential(size=(b - a, n))
        means = sims @ wn
        order = np.argsort(sims, axis=1, kind="stable")
        xs = np.take_along_axis(sims, order, axis=1)
        wc = np.cumsum(wn[order], axis=1)
        out[a:b] = _ks_sorted(xs, wc, means)
    return out


@dataclass(frozen=True)
class MomentRatio:
    p: int
    ratio: float
    ci_low: float
    ci_high: float

    def covers(self, value: float = 1.0) -> bool:
        return self.ci_low <= value <= self.ci_high


@dataclass(frozen=True)
class FitReport:
    n_effective: float
    fitted_mean: float
    ks_statistic: float
    p_value: float
    moment_ratios: tuple = ()
    n_boot: int = 2000
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def exp_fit(sample, weights=None, n_boot: int = 2000, seed: int = 0, p_max: int = 4) -> FitReport:
    """Fit Exp(mean) by the weighted average; KS p-value by parametric bootstrap with the mean refit."""
    x, w = _prepare(sample, weights)
    if n_boot < 2000:
        raise ConfigurationError("at least 2000 bootstrap resamples are required")
    n_eff = effective_size(w)
    if n_eff < MIN_EFFECTIVE:
        raise ConfigurationError(f"effective sample size {n_eff:.1f} < {MIN_EFFECTIVE}")
    mean = float(w @ x / w.sum())
    if mean <= 0:
        raise DegenerateFitError("all-zero sample")
    d = ks_statistic(x, w)
    if np.all(w == 1.0):
        null = _null_ks_unweighted(x.size, n_boot, seed)
    else:
        null = _null_ks_weighted(w, n_boot, seed)
    p = (1 + int(np.sum(null >= d))) / (1 + n_boot)
    usable = max([q for q, m in MIN_N_FOR_ORDER.items() if n_eff >= m and q <= p_max], default=0)
    ratios = tuple(moment_ratios(x, usable, w, n_boot, seed)) if usable else ()
    return FitReport(n_eff, mean, d, p, ratios, n_boot, seed)


def _ratio_stat(xp, wn, p_max):
    m1 = wn @ xp[0]
    return np.array([(wn @ xp[p - 1]) / (math.factorial(p) * m1**p) for p in range(1, p_max + 1)])


def moment_ratios(sample, p_max: int, weights=None, n_boot: int = 2000, seed: int = 0,
                  level: float = 0.95) -> list[MomentRatio]:
    """m_p / (p! m_1^p) with basic-bootstrap confidence intervals; equal to 1 for exponential laws."""
    x, w = _prepare(sample, weights)
    if not 1 <= p_max <= 4:
        raise ConfigurationError("moment ratios are offered for 1 <= p <= 4")
    n_eff = effective_size(w)
    need = MIN_N_FOR_ORDER[p_max]
    if n_eff < need:
        raise ConfigurationError(f"order {p_max} needs an effective sample of at least {need}, got {n_eff:.0f}")
    if not np.any(x > 0):
        raise DegenerateFitError("all-zero sample")
    xp = np.vstack([x**p for p in range(1, p_max + 1)])
    wn = w / w.sum()
    est = _ratio_stat(xp, wn, p_max)
    rng = np.random.default_rng(seed + 1)
    boot = np.empty((n_boot, p_max))
    for b in range(n_boot):
        idx = rng.integers(0, x.size, x.size)
        wb = w[idx]
        boot[b] = _ratio_stat(xp[:, idx], wb / wb.sum(), p_max)
    a = (1 - level) / 2
    qlo, qhi = np.quantile(boot, [a, 1 - a], axis=0)
    return [MomentRatio(p, float(est[p - 1]), float(2 * est[p - 1] - qhi[p - 1]), float(2 * est[p - 1] - qlo[p - 1]))
            for p in range(1, p_max + 1)]


def cdf_table(sample, weights=None, mean: float | None = None, n_points: int | None = None) -> np.ndarray:
    """Columns (value, empirical CDF, fitted exponential CDF) at the sorted sample points."""
    x, w = _prepare(sample, weights)
    order = np.argsort(x, kind="stable")
    xs, wc = x[order], np.cumsum(w[order]) / w.sum()
    m = float(w @ x / w.sum()) if mean is None else mean
    # keep the last point of each tie group
    keep = np.append(xs[1:] != xs[:-1], True)
    xs, wc = xs[keep], wc[keep]
    if n_points and xs.size > n_points:
        sel = np.unique(np.linspace(0, xs.size - 1, n_points).round().astype(int))
        xs, wc = xs[sel], wc[sel]
    return np.column_stack([xs, wc, -np.expm1(-xs / m)])


def write_cdf_csv(path, sample, weights=None, mean=None) -> None:
    np.savetxt(path, cdf_table(sample, weights, mean), delimiter=",", header="value,empirical_cdf,fitted_cdf",
               comments="", fmt="%.10g")


# ------------------------------------------------------------------ trends

@lru_cache(maxsize=8)
def _kendall_null(n: int) -> np.ndarray:
    """Exact permutation distribution of Kendall's S for n distinct values."""
    out = []
    for perm in itertools.permutations(range(n)):
        s = 0
        for i in range(n):
            for j in range(i + 1, n):
                s += 1 if perm[j] > perm[i] else -1
        out.append(s)
    return np.array(out)


@dataclass(frozen=True)
class TrendResult:
    verdict: str  # "increasing", "decreasing" or "neither"
    kendall_s: int
    p_value: float
    slope_z: float | None = None
    scales: tuple = field(default=(), repr=False)
    values: tuple = field(default=(), repr=False)


def trend_test(scales: Sequence[float], values: Sequence[float], standard_errors: Sequence[float] | None = None,
               alpha: float = 0.2, z_min: float = 2.0) -> TrendResult:
    """Is ``values`` monotone in ``scales``?

    Points are ordered by scale.  The ordering test is Kendall's S with its
    exact permutation p-value (one-sided, in the observed direction) for up
    to 8 points.  When standard errors are given, a weighted least-squares
    slope against log(scale) must also differ from zero by ``z_min``
    standard errors, so noise-level wiggles are not called a trend.
    """
    s = np.asarray(scales, dtype=float)
    v = np.asarray(values, dtype=float)
    if s.size != v.size or s.size < 3:
        raise ConfigurationError("trend_test needs at least 3 (scale, value) points")
    order = np.argsort(s, kind="stable")
    s, v = s[order], v[order]
    n = v.size
    S = int(sum(np.sign(v[j] - v[i]) for i in range(n) for j in range(i + 1, n)))
    if S == 0:
        p = 1.0
    elif n <= 8:
        null = _kendall_null(n)
        p = float(np.mean(null >= S) if S > 0 else np.mean(null <= S))
    else:
        p = float(sps.kendalltau(s, v, alternative="greater" if S > 0 else "less").pvalue)
    z = None
    if standard_errors is not None:
        se = np.asarray(standard_errors, dtype=float)[order]
        if np.any(~(se > 0)):
            raise ConfigurationError("standard errors must be positive")
        x = np.log(s) if np.all(s > 0) else s
        wt = 1.0 / se**2
        xm = wt @ x / wt.sum()
        sxx = wt @ (x - xm) ** 2
        slope = wt @ ((x - xm) * v) / sxx
        z = float(slope * math.sqrt(sxx))
    verdict = "neither"
    if S != 0 and p <= alpha and (z is None or (abs(z) >= z_min and np.sign(z) == np.sign(S))):
        verdict = "increasing" if S > 0 else "decreasing"
    return TrendResult(verdict, S, p, z, tuple(s), tuple(v))
