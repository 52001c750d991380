import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from oracles import birth_death_metrics
from taxiq.errors import NotStable
from taxiq.matching import (Mm1Spec, SyncArrivals, approximate_mm1, mm1_metrics, mm1_sojourn_pdf,
                            service_rate_from_search_time, sync_asymptotic_moments, sync_pair_pmf)
from taxiq.sim import sample_pair_counts, simulate_matching_queue


def test_pmf_at_time_zero():
    a = SyncArrivals(2.0, 3.0)
    assert sync_pair_pmf(a, 0.0, 0) == 1.0
    assert sync_pair_pmf(a, 0.0, 1) == 0.0
    assert sync_pair_pmf(a, 0.0, 5) == 0.0


def test_pmf_normalised():
    a = SyncArrivals(2.0, 3.0)
    assert abs(sum(sync_pair_pmf(a, 2.0, s) for s in range(200)) - 1.0) < 1e-9


def test_pmf_zero_vs_monte_carlo():
    rng = np.random.default_rng(11)
    n = 10**6
    hits = np.minimum(rng.poisson(1.0, n), rng.poisson(1.0, n)) == 0
    p_hat = hits.mean()
    p = sync_pair_pmf(SyncArrivals(1.0, 1.0), 1.0, 0)
    # exact value 1 - (1 - e^-1)^2
    assert abs(p - (1 - (1 - math.exp(-1)) ** 2)) < 1e-14
    assert abs(p_hat - p) < 3 * math.sqrt(p * (1 - p) / n)


@pytest.mark.parametrize("lp,lv,t", [(0.5, 0.5, 1.0), (1.0, 4.0, 3.0), (5.0, 2.0, 10.0), (3.0, 3.0, 20.0), (0.0, 2.0, 1.0)])
def test_pmf_grid_normalised_and_unimodal(lp, lv, t):
    a = SyncArrivals(lp, lv)
    p = np.array([sync_pair_pmf(a, t, s) for s in range(400)])
    assert abs(p.sum() - 1) < 1e-9
    mode = int(np.argmax(p))
    assert np.all(np.diff(p[mode:]) <= 1e-300)


@pytest.mark.parametrize("lp,lv,t", [(1.0, 1.0, 2.0), (2.0, 0.7, 5.0)])
def test_pmf_vs_simulated_counts(lp, lv, t):
    s = sample_pair_counts(lp, lv, t, 40_000, seed=5)
    a = SyncArrivals(lp, lv)
    for k in range(6):
        p = sync_pair_pmf(a, t, k)
        assert abs(np.mean(s == k) - p) < 4 * math.sqrt(p * (1 - p) / s.size) + 1e-12


def test_mean_rate_converges_to_min():
    a = SyncArrivals(2.0, 1.5)
    errs = []
    for t in (10.0, 100.0, 1000.0):
        hi = int(3 * 2.0 * t + 200)
        mean = sum(s * sync_pair_pmf(a, t, s) for s in range(hi))
        errs.append(abs(mean / t - 1.5))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.01


def test_asymptotic_moments():
    assert sync_asymptotic_moments(SyncArrivals(3, 2)) == (2, 2)
    m, v = sync_asymptotic_moments(SyncArrivals(1, 1))
    assert m == 1 and abs(v - (1 - 1 / math.pi)) < 1e-15 and abs(v - 0.6817) < 1e-4
    assert sync_asymptotic_moments(SyncArrivals(0, 5)) == (0, 0)


def test_approximate_mm1():
    assert approximate_mm1(SyncArrivals(3, 2), 5) == Mm1Spec(2, 5)
    assert not approximate_mm1(SyncArrivals(2, 2), 2).stable
    spec = approximate_mm1(SyncArrivals(1, 4), 2)
    assert spec == Mm1Spec(1, 2)
    sim = simulate_matching_queue(1, 4, 2, horizon=50_000, seed=3, replications=4)
    assert abs(sim.w - mm1_metrics(spec).w) / 1.0 < 0.03


def test_mm1_closed_form():
    m = mm1_metrics(Mm1Spec(1, 2))
    assert (m.rho, m.l, m.lq, m.w, m.wq) == (0.5, 1.0, 0.5, 1.0, 0.5)
    z = mm1_metrics(Mm1Spec(0, 3))
    assert z.rho == 0 and z.l == 0 and z.wq == 0 and abs(z.w - 1 / 3) < 1e-15


def test_mm1_vs_birth_death_chain():
    m = mm1_metrics(Mm1Spec(1.8, 2.0))
    o = birth_death_metrics(1.8, 2.0, 1, cap=400)
    for k in ("l", "lq", "w", "wq"):
        assert abs(getattr(m, k) - o[k]) / o[k] < 1e-6


def test_mm1_unstable():
    with pytest.raises(NotStable):
        mm1_metrics(Mm1Spec(2, 2))
    with pytest.raises(NotStable):
        mm1_sojourn_pdf(Mm1Spec(3, 2), 1.0)


def test_sojourn_pdf():
    spec = Mm1Spec(1, 2)
    assert mm1_sojourn_pdf(spec, 0.0) == 1.0
    total, _ = integrate.quad(lambda t: mm1_sojourn_pdf(spec, t), 0, np.inf, epsabs=1e-13)
    assert abs(total - 1) < 1e-9
    mean, _ = integrate.quad(lambda t: t * mm1_sojourn_pdf(spec, t), 0, np.inf, epsabs=1e-13)
    assert abs(mean - mm1_metrics(spec).w) < 1e-9


def test_service_rate_examples():
    assert service_rate_from_search_time(2, 0.5) == 4
    assert mm1_metrics(Mm1Spec(2, 4)).w == 0.5
    assert service_rate_from_search_time(0, 2) == 0.5
    assert service_rate_from_search_time(2, 0.5, literal=True) == 2.5
    with pytest.raises(ValueError):
        service_rate_from_search_time(1, 0)


def test_service_rate_from_simulated_sojourns():
    # exponential sojourns of an M/M/1(2, 4): rate mu - lambda = 2
    rng = np.random.default_rng(8)
    t = rng.exponential(1 / 2.0, 10**5)
    assert abs(service_rate_from_search_time(2.0, t.mean()) - 4.0) / 4.0 < 0.02


def test_service_rate_from_simulated_queue():
    sim = simulate_matching_queue(10.0, 2.0, 4.0, horizon=60_000, seed=4, replications=1)
    assert abs(service_rate_from_search_time(2.0, sim.w) - 4.0) / 4.0 < 0.02


stable = st.tuples(st.floats(0.0, 100.0), st.floats(1e-3, 100.0)).filter(lambda t: t[0] < t[1] * (1 - 1e-6))


@given(stable)
def test_little_law(lm):
    lam, mu = lm
    m = mm1_metrics(Mm1Spec(lam, mu))
    assert 0 <= m.rho < 1 and m.l >= m.lq >= 0 and m.w >= m.wq >= 0
    assert math.isclose(m.l, lam * m.w, rel_tol=1e-12, abs_tol=1e-300)
    assert math.isclose(m.lq, lam * m.wq, rel_tol=1e-12, abs_tol=1e-300)


@given(stable)
def test_service_rate_inverts_sojourn(lm):
    lam, mu = lm
    w = mm1_metrics(Mm1Spec(lam, mu)).w
    assert math.isclose(service_rate_from_search_time(lam, w), mu, rel_tol=1e-9)


@given(st.floats(0.0, 6.0), st.floats(0.0, 6.0), st.floats(0.0, 4.0))
def test_pmf_sums_to_one(lp, lv, t):
    a = SyncArrivals(lp, lv)
    hi = int(max(lp, lv) * t + 20 * math.sqrt(max(lp, lv) * t + 1) + 30)
    assert abs(sum(sync_pair_pmf(a, t, s) for s in range(hi)) - 1) < 1e-9
