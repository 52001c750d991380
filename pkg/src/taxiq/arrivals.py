"""Poisson goodness-of-fit tests for binned arrival counts and rate estimation."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .errors import AllZero, TooFewSamples

METHODS = ("adapted_ks", "anscombe", "likelihood", "conditional")
LABELS = ("passenger", "vehicle_ats", "vehicle_tts", "pooled")


@dataclass(frozen=True, eq=False)
class CountSeries:
    counts: np.ndarray
    interval_minutes: float = 1.0
    zone: str = ""
    label: str = "pooled"
    scale: str = ""
    period: str = ""

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("counts must be a non-empty 1-d sequence")
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ValueError("counts must be non-negative integers")
        if not self.interval_minutes > 0:
            raise ValueError("interval_minutes must be positive")
        c = c.astype(np.int64)
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return int(self.counts.size)

    def __eq__(self, other):
        if not isinstance(other, CountSeries):
            return NotImplemented
        return (np.array_equal(self.counts, other.counts) and self.interval_minutes == other.interval_minutes
                and (self.zone, self.label, self.scale, self.period)
                == (other.zone, other.label, other.scale, other.period))


@dataclass(frozen=True)
class TestResult:
    method: str
    statistic: float
    threshold: float
    p_value: float | None
    reject: bool
    n: int

    __test__ = False  # keep pytest from collecting this class


def chi2_critical(dof: int, alpha: float) -> float:
    return float(stats.chi2.isf(alpha, dof))


def kolmogorov_critical(alpha: float) -> float:
    return float(stats.kstwobign.isf(alpha))


def _need(series: CountSeries, n_min: int):
    if series.n < n_min:
        raise TooFewSamples(f"{series.n} counts, need at least {n_min}")


def _chi2_result(method, t, n, alpha):
    t = max(float(t), 0.0)
    crit = chi2_critical(n - 1, alpha)
    return TestResult(method, t, crit, float(stats.chi2.sf(t, n - 1)), t > crit, n)


def adapted_ks_test(series: CountSeries, alpha: float = 0.05, split_seed: int = 0) -> TestResult:
    """KS distance between a Poisson fit on one random half and the ECDF of the other.

    The fit uses the first half of a seeded random permutation; the statistic
    is max_x sqrt(n)|H(x) - F_n(x)| - 1/sqrt(n) with n the evaluation size.
    """
    _need(series, 20)
    c = series.counts
    perm = np.random.default_rng(split_seed).permutation(c.size)
    half = c.size // 2
    fit, ev = c[perm[:half]], c[perm[half:]]
    n = ev.size
    x = np.arange(int(c.max()) + 1)
    h = stats.poisson.cdf(x, fit.mean()) if fit.mean() > 0 else np.ones_like(x, dtype=float)
    f = np.searchsorted(np.sort(ev), x, side="right") / n
    d = math.sqrt(n) * float(np.max(np.abs(h - f))) - 1.0 / math.sqrt(n)
    crit = kolmogorov_critical(alpha)
    return TestResult("adapted_ks", d, crit, None, d > crit, n)


def anscombe_test(series: CountSeries, alpha: float = 0.05) -> TestResult:
    """Dispersion of the variance-stabilised counts sqrt(c + 3/8)."""
    _need(series, 2)
    y = np.sqrt(series.counts + 0.375)
    t = 4.0 * float(np.sum((y - y.mean()) ** 2))
    return _chi2_result("anscombe", t, series.n, alpha)


def _mean_or_raise(series):
    m = float(series.counts.mean())
    if m == 0:
        raise AllZero("all counts are zero")
    return m


def likelihood_ratio_test(series: CountSeries, alpha: float = 0.05, correction: str | None = "williams") -> TestResult:
    """G statistic 2 sum c ln(c / mean), zero counts contributing nothing.

    The chi-square approximation to G runs liberal for small means (size near
    0.09 at mean 5, n = 60). With ``correction="williams"`` the reported
    statistic stays the raw G while the threshold and p-value use G / q with
    q = 1 + (n + 1) / (6 N), N the total count. ``correction=None`` gives the
    uncorrected test.
    """
    _need(series, 2)
    m = _mean_or_raise(series)
    c = series.counts.astype(float)
    pos = c > 0
    t = max(2.0 * float(np.sum(c[pos] * np.log(c[pos] / m))), 0.0)
    n = series.n
    if correction is None:
        q = 1.0
    elif correction == "williams":
        q = 1.0 + (n + 1) / (6.0 * c.sum())
    else:
        raise ValueError(f"unknown correction {correction!r}")
    crit = q * chi2_critical(n - 1, alpha)
    return TestResult("likelihood", t, crit, float(stats.chi2.sf(t / q, n - 1)), t > crit, n)


def conditional_chi2_test(series: CountSeries, alpha: float = 0.05) -> TestResult:
    """Index-of-dispersion statistic sum (c - mean)^2 / mean."""
    _need(series, 2)
    m = _mean_or_raise(series)
    t = float(np.sum((series.counts - m) ** 2)) / m
    return _chi2_result("conditional", t, series.n, alpha)


def run_test(method: str, series: CountSeries, alpha: float = 0.05, split_seed: int = 0) -> TestResult:
    if method == "adapted_ks":
        return adapted_ks_test(series, alpha, split_seed)
    fn = {"anscombe": anscombe_test, "likelihood": likelihood_ratio_test,
          "conditional": conditional_chi2_test}.get(method)
    if fn is None:
        raise ValueError(f"unknown method {method!r}")
    return fn(series, alpha)


def estimate_rate(series: CountSeries) -> float:
    """Arrivals per minute: mean count over the bin width."""
    return float(series.counts.mean()) / series.interval_minutes


def rebin(series: CountSeries, k: int) -> CountSeries:
    """Sum k adjacent bins; a trailing partial bin is dropped."""
    if k < 1 or series.n < k:
        raise ValueError("need 1 <= k <= len(series)")
    m = series.n // k
    c = series.counts[: m * k].reshape(m, k).sum(axis=1)
    return replace(series, counts=c, interval_minutes=series.interval_minutes * k)


@dataclass(frozen=True)
class SweepCell:
    method: str
    alpha: float
    interval_minutes: float
    scale: str
    period: str
    label: str
    n_series: int
    n_tested: int
    accept_fraction: float


def sweep_tests(series_set, methods=METHODS, alphas=(0.05,), split_seed: int = 0) -> list[SweepCell]:
    """Fraction of series accepting the Poisson null per (method, alpha, interval, scale, period, label).

    Series too short or all-zero for a method are counted in n_series but not tested.
    """
    groups = defaultdict(list)
    for s in series_set:
        groups[(s.interval_minutes, s.scale, s.period, s.label)].append(s)
    if not groups:
        raise ValueError("need at least one series")
    cells = []
    for (interval, scale, period, label), members in sorted(groups.items()):
        for method in methods:
            for alpha in alphas:
                res = []
                for s in members:
                    try:
                        res.append(run_test(method, s, alpha, split_seed))
                    except (TooFewSamples, AllZero):
                        pass
                frac = float(np.mean([not r.reject for r in res])) if res else math.nan
                cells.append(SweepCell(method, alpha, interval, scale, period, label,
                                       len(members), len(res), frac))
    return cells


def read_counts_csv(path) -> list[CountSeries]:
    """Rows ``zone,label,interval_minutes,c1,c2,...``; a leading header row is skipped."""
    out = []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            if not row or (k == 0 and row[0].strip() == "zone"):
                continue
            if len(row) < 4:
                raise ValueError(f"line {k + 1}: need zone,label,interval_minutes and at least one count")
            zone, label, interval = row[0].strip(), row[1].strip(), float(row[2])
            counts = [int(v) for v in row[3:] if v.strip() != ""]
            out.append(CountSeries(np.array(counts), interval, zone, label))
    return out


def write_counts_csv(path, series_set) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone", "label", "interval_minutes", "counts..."])
        for s in series_set:
            w.writerow([s.zone, s.label, f"{s.interval_minutes:.12g}", *s.counts.tolist()])
