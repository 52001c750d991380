"""Synchronized (SM/M/1) passenger-vehicle matching queue analytics.

Passengers and vehicles arrive as independent Poisson streams and are paired
first-come-first-served; each pair then receives one exponential service.
The pair-count process S_t = min(N_p(t), N_v(t)) is not Poisson, but its
long-run rate is min(lambda_p, lambda_v), which gives the M/M/1 approximation
used throughout the network model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotStable

PMF_REL_TOL = 1e-15


@dataclass(frozen=True)
class SyncArrivals:
    lambda_p: float
    lambda_v: float

    def __post_init__(self):
        if self.lambda_p < 0 or self.lambda_v < 0:
            raise ValueError("arrival rates must be >= 0")

    @property
    def pair_rate(self) -> float:
        return min(self.lambda_p, self.lambda_v)


@dataclass(frozen=True)
class Mm1Spec:
    lam: float
    mu: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.mu <= 0:
            raise ValueError("mu must be > 0")

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    @property
    def stable(self) -> bool:
        return self.lam < self.mu


@dataclass(frozen=True)
class QueueMetrics:
    rho: float
    l: float
    lq: float
    w: float
    wq: float


def _poisson_tail_sum(rate_t: float, start: int) -> float:
    """sum_{x >= start} Poisson(x; rate_t), summed term by term in log space."""
    if rate_t == 0.0:
        return 1.0 if start <= 0 else 0.0
    log_rt = math.log(rate_t)
    total = 0.0
    x = start
    while True:
        term = math.exp(-rate_t + x * log_rt - math.lgamma(x + 1))
        total += term
        # only stop on the decreasing side of the mode
        if x >= rate_t and term <= PMF_REL_TOL * total:
            return total
        x += 1


def _poisson_pmf(rate_t: float, k: int) -> float:
    if rate_t == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(-rate_t + k * math.log(rate_t) - math.lgamma(k + 1))


def sync_pair_pmf(arrivals: SyncArrivals, t: float, s: int) -> float:
    """P(S_t = s) for S_t = min(N_p(t), N_v(t)).

    Split on which stream is ahead: {N_p >= N_v = s} plus {N_v > N_p = s}.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if s < 0 or int(s) != s:
        raise ValueError("s must be a non-negative integer")
    s = int(s)
    ap = arrivals.lambda_p * t
    av = arrivals.lambda_v * t
    first = _poisson_pmf(av, s) * _poisson_tail_sum(ap, s)
    second = _poisson_pmf(ap, s) * _poisson_tail_sum(av, s + 1)
    return first + second


def sync_asymptotic_moments(arrivals: SyncArrivals) -> tuple[float, float]:
    """Long-run (E[S_t]/t, Var[S_t]/t)."""
    lp, lv = arrivals.lambda_p, arrivals.lambda_v
    if lp != lv:
        m = min(lp, lv)
        return m, m
    return lp, lp * (1.0 - 1.0 / math.pi)


def approximate_mm1(arrivals: SyncArrivals, mu: float) -> Mm1Spec:
    """M/M/1 stand-in with arrival rate min(lambda_p, lambda_v).

    The result may be unstable (``spec.stable`` is False); that is reported,
    not raised.
    """
    return Mm1Spec(arrivals.pair_rate, mu)


def mm1_metrics(spec: Mm1Spec) -> QueueMetrics:
    lam, mu = spec.lam, spec.mu
    if not spec.stable:
        raise NotStable(f"M/M/1 with lambda={lam} >= mu={mu}")
    w = 1.0 / (mu - lam)
    wq = lam / (mu * (mu - lam))
    return QueueMetrics(rho=lam / mu, l=lam * w, lq=lam * wq, w=w, wq=wq)


def mm1_sojourn_pdf(spec: Mm1Spec, t):
    """Density of the M/M/1 sojourn time, exponential with rate mu - lambda."""
    if not spec.stable:
        raise NotStable(f"M/M/1 with lambda={spec.lam} >= mu={spec.mu}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    r = spec.mu - spec.lam
    out = r * np.exp(-r * t)
    return float(out) if out.ndim == 0 else out


def service_rate_from_search_time(lambda_pv: float, mean_search_time: float, literal: bool = False) -> float:
    """Matching service rate from the observed mean search (sojourn) time.

    M/M/1 mean sojourn is 1/(mu - lambda), so mu = lambda + 1/t_hat.
    ``literal=True`` returns lambda + t_hat instead, for reproducing the
    uncorrected form.
    """
    if not mean_search_time > 0:
        raise ValueError("mean_search_time must be > 0")
    if lambda_pv < 0:
        raise ValueError("lambda_pv must be >= 0")
    if literal:
        return lambda_pv + mean_search_time
    return lambda_pv + 1.0 / mean_search_time
