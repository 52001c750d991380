"""M/M/c road-queue analytics and server-count estimation from MFD samples."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, NotStable
from .matching import Mm1Spec, QueueMetrics, mm1_metrics

MFD_BINS = 20


class MfdBoundaryWarning(UserWarning):
    """The binned production curve has no interior maximum."""


@dataclass(frozen=True)
class MmcSpec:
    lam: float
    mu: float
    c: int

    def __post_init__(self):
        if self.lam < 0 or self.mu <= 0:
            raise ValueError("need lam >= 0 and mu > 0")
        if int(self.c) != self.c or self.c < 1:
            raise ValueError("c must be an integer >= 1")

    @property
    def offered_load(self) -> float:
        return self.lam / self.mu

    @property
    def rho(self) -> float:
        return self.lam / (self.c * self.mu)

    @property
    def stable(self) -> bool:
        return self.lam < self.c * self.mu


@dataclass(frozen=True)
class MfdSample:
    accumulation: float
    production: float

    def __post_init__(self):
        if self.accumulation < 0 or self.production < 0:
            raise ValueError("MFD samples must be non-negative")


def _log_terms(spec: MmcSpec):
    """log(r^n/n!) for n < c and log of the tail term r^c/(c!(1-rho))."""
    c, r, rho = spec.c, spec.offered_load, spec.rho
    lr = math.log(r)
    head = np.array([n * lr - math.lgamma(n + 1) for n in range(c)])
    tail = c * lr - math.lgamma(c + 1) - math.log1p(-rho)
    return head, tail


def _check(spec: MmcSpec):
    if not spec.stable:
        raise NotStable(f"M/M/c with lambda={spec.lam} >= c*mu={spec.c * spec.mu}")


def mmc_p0(spec: MmcSpec) -> float:
    """Probability of an empty M/M/c system."""
    _check(spec)
    if spec.lam == 0:
        return 1.0
    head, tail = _log_terms(spec)
    logs = np.append(head, tail)
    m = logs.max()
    return float(math.exp(-(m + math.log(np.exp(logs - m).sum()))))


def erlang_c(spec: MmcSpec) -> float:
    """Probability that an arrival has to wait."""
    _check(spec)
    if spec.lam == 0:
        return 0.0
    head, tail = _log_terms(spec)
    logs = np.append(head, tail)
    m = logs.max()
    return float(math.exp(tail - m - math.log(np.exp(logs - m).sum())))


def _mmc_general(spec: MmcSpec) -> QueueMetrics:
    rho = spec.rho
    pw = erlang_c(spec)
    lq = pw * rho / (1.0 - rho)
    wq = lq / spec.lam if spec.lam > 0 else 0.0
    return QueueMetrics(rho=rho, l=spec.offered_load + lq, lq=lq, w=1.0 / spec.mu + wq, wq=wq)


def mmc_metrics(spec: MmcSpec) -> QueueMetrics:
    """Stationary M/M/c metrics; W_q comes from Little's law (0 when lambda = 0)."""
    _check(spec)
    if spec.c == 1:
        return mm1_metrics(Mm1Spec(spec.lam, spec.mu))
    return _mmc_general(spec)


def estimate_servers_from_mfd(samples) -> int:
    """Server count c as the accumulation where binned mean production peaks.

    Accumulation is cut into bins of width max(1, range/20). When the peak
    falls in the first or last bin the curve has no interior maximum; the
    observed boundary accumulation is returned and MfdBoundaryWarning issued.
    """
    samples = list(samples)
    acc = np.array([s.accumulation for s in samples], dtype=float)
    prod = np.array([s.production for s in samples], dtype=float)
    if len(samples) < 10 or len(np.unique(acc)) < 5:
        raise InsufficientData("need >= 10 MFD samples spanning >= 5 distinct accumulations")

    lo, hi = acc.min(), acc.max()
    width = max(1.0, (hi - lo) / MFD_BINS)
    nbins = int(math.floor((hi - lo) / width)) + 1
    idx = np.minimum(((acc - lo) / width).astype(int), nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    occupied = np.flatnonzero(counts)
    mean_prod = np.bincount(idx, weights=prod, minlength=nbins)[occupied] / counts[occupied]
    mean_acc = np.bincount(idx, weights=acc, minlength=nbins)[occupied] / counts[occupied]

    k = int(np.argmax(mean_prod))
    if k == len(occupied) - 1:
        warnings.warn("production still rising at the largest accumulation", MfdBoundaryWarning)
        return max(1, int(round(hi)))
    if k == 0:
        warnings.warn("production peaks at the smallest accumulation", MfdBoundaryWarning)
        return max(1, int(round(lo)))
    return max(1, int(round(mean_acc[k])))


def read_mfd_csv(path) -> list[MfdSample]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["accumulation", "production"]:
            raise ValueError("MFD CSV header must be 'accumulation,production'")
        return [MfdSample(float(r["accumulation"]), float(r["production"])) for r in reader]
