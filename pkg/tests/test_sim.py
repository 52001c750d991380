import math

import numpy as np
import pytest

from taxiq import fixtures
from taxiq.flow import solve_fixed_point
from taxiq.matching import Mm1Spec, mm1_metrics
from taxiq.metrics import network_metrics
from taxiq.model import NetworkConfig, RoutingMatrices, ZoneParams
from taxiq.road import MmcSpec, mmc_p0
from taxiq.sim import (SimParams, compare_to_analytic, generate_trips, simulate, simulate_matching_queue,
                       simulate_raw_trips)


def single_service(lam_p, lam_v, mu, c=50):
    """One zone where every passenger and vehicle is ATS and vehicles exit after their trip."""
    p = ZoneParams(lambda_p=lam_p, p_ats=1.0, lambda_v_ats=lam_v, lambda_v_tts=0.0, p_pick_ats=0.0,
                   p_pick_tts=0.0, mu_ats=mu, mu_tts=1.0, mu_road=1.0, c_road=c)
    return NetworkConfig(("A",), np.zeros((1, 1), bool), (p,), RoutingMatrices.uniform([[0.0, 1.0]]))


def test_params_defaults_and_checks():
    p = SimParams(horizon=100.0)
    assert p.warmup == 10.0 and p.replications == 1
    for bad in (dict(horizon=10, warmup=10), dict(horizon=10, replications=0), dict(horizon=10, seed=-1)):
        with pytest.raises(ValueError):
            SimParams(**bad)


def test_deterministic_and_jobs_independent():
    cfg = fixtures.two_zone()
    params = SimParams(horizon=300.0, seed=9, replications=3)
    a, b = simulate(cfg, params), simulate(cfg, params, jobs=2)
    for m in a.values:
        assert np.array_equal(a.values[m], b.values[m], equal_nan=True)
    assert np.array_equal(a.exits, b.exits)
    c = simulate(cfg, SimParams(horizon=300.0, seed=10, replications=3))
    assert not np.array_equal(a.values["l"], c.values["l"])


def test_conservation_reported():
    cfg = fixtures.five_ring()
    rep = simulate(cfg, SimParams(horizon=500.0, seed=1, replications=2))
    assert np.array_equal(rep.vehicles_in, rep.exits.sum(axis=(1, 2)) + rep.in_system)
    assert np.all(rep.se("w") >= 0) and np.all(rep.mean("throughput") >= 0)


def test_no_passengers():
    cfg = fixtures.two_zone().with_params(lambda_p=0.0)
    h, w = 2000.0, 200.0
    rep = simulate(cfg, SimParams(horizon=h, warmup=w, seed=2))
    assert np.all(rep.mean("throughput")[:, :2] == 0)
    # every vehicle ever arrived is still waiting: counts are Poisson(lambda_v * h)
    lv = 2.0
    back = rep.vehicle_backlog[0]
    assert np.all(np.abs(back - lv * h) < 4 * math.sqrt(lv * h))


def test_matched_throughput_is_min():
    cfg = single_service(4.0, 1.0, 10.0)
    rep = simulate(cfg, SimParams(horizon=1e5, seed=3))
    assert abs(rep.mean("throughput")[0, 0] - 1.0) < 0.02


def test_pair_sojourn_vs_mm1():
    cfg = single_service(4.0, 1.0, 2.0)
    rep = simulate(cfg, SimParams(horizon=1e5, seed=4))
    w = rep.mean("w")[0, 0]
    assert abs(w - 1.0) / 1.0 <= 0.03
    fast = simulate_matching_queue(4.0, 1.0, 2.0, horizon=1e5, seed=4, replications=4)
    assert abs(fast.w - w) < 0.03


def test_event_engine_matches_vectorised_queue():
    cfg = single_service(1.2, 1.0, 1.6)
    ev = simulate(cfg, SimParams(horizon=20_000.0, seed=5, replications=8))
    fast = simulate_matching_queue(1.2, 1.0, 1.6, horizon=20_000.0, seed=5, replications=8)
    se = math.hypot(float(ev.se("w")[0, 0]), fast.mean_sojourn.std(ddof=1) / math.sqrt(8))
    assert abs(ev.mean("w")[0, 0] - fast.w) < 4 * se
    assert abs(np.mean(fast.throughput) - ev.mean("throughput")[0, 0]) < 0.02


def test_road_empty_probability():
    cfg = fixtures.isolated()
    fl = solve_fixed_point(cfg)
    rep = simulate(cfg, SimParams(horizon=5000.0, seed=6, replications=10))
    p = cfg.params[0]
    p0 = mmc_p0(MmcSpec(fl.lambda_road[0], p.mu_road, p.c_road))
    assert abs(rep.mean("p_empty")[0, 2] - p0) < 3 * rep.se("p_empty")[0, 2]


def test_road_never_exceeds_servers():
    cfg = fixtures.single_zone_ctmc()
    rep = simulate(cfg, SimParams(horizon=2000.0, seed=7))
    # utilisation is the mean busy-server count over c, so it can never pass 1
    assert np.all(rep.values["rho"][..., 2] <= 1.0)


def test_fcfs_pairing_order():
    cfg = fixtures.roundtrip_two_zone()
    trips = [t for t in simulate_raw_trips(cfg, SimParams(horizon=1500.0, seed=8)) if t.event == ""]
    for zone in range(2):
        for svc in ("ats", "tts"):
            sel = sorted((t.start, t.start - t.search) for t in trips if t.origin == zone and t.service == svc)
            formed = [f for _, f in sel]
            assert formed == sorted(formed)


def test_unstable_queue_grows_and_is_reported():
    cfg = fixtures.two_zone().with_params(mu_tts=3.5)
    fl = solve_fixed_point(cfg)
    short = simulate(cfg, SimParams(horizon=1000.0, warmup=0.0, seed=1))
    long = simulate(cfg, SimParams(horizon=4000.0, warmup=0.0, seed=1))
    assert long.mean("l")[0, 1] > 2 * short.mean("l")[0, 1]
    table = compare_to_analytic(cfg, fl, long)
    flags = {(d.zone, d.queue): d.flag for d in table}
    assert flags[("A", "tts")] == "no analytic value" and flags[("A", "ats")] != "no analytic value"


def test_stable_two_zone_matches_analytic():
    cfg = fixtures.two_zone()
    fl = solve_fixed_point(cfg)
    rep = simulate(cfg, SimParams(horizon=10_000.0, seed=42, replications=10))
    table = compare_to_analytic(cfg, fl, rep)
    w_rows = [d for d in table if d.metric == "w"]
    assert all(d.flag == "ok" for d in w_rows), [(d.zone, d.queue, d.rel_error) for d in w_rows]
    lnet = network_metrics(cfg, fl).l_network
    assert abs(rep.total_occupancy().mean() - lnet) / lnet < 0.03


def test_light_load_within_one_percent():
    cfg = single_service(0.6, 50.0, 2.0)
    rep = simulate(cfg, SimParams(horizon=1e5, seed=11, replications=2))
    table = compare_to_analytic(cfg, solve_fixed_point(cfg), rep, metrics=("rho", "w"))
    errs = {(d.queue, d.metric): d.rel_error for d in table if d.queue == "ats"}
    assert errs[("ats", "w")] <= 0.01 and errs[("ats", "rho")] <= 0.01


def test_generate_trips_units():
    cfg = fixtures.roundtrip_two_zone()
    params = SimParams(horizon=300.0, warmup=30.0, seed=3)
    recs = generate_trips(cfg, params, epoch=1000.0)
    raw = simulate_raw_trips(cfg, params)
    assert len(recs) == len(raw)
    assert min(r.pickup_time for r in recs) >= 1000.0 + 60 * 30.0
    occ = [r for r in recs if r.is_trip]
    assert occ and all(r.search_time is not None and r.fare > 0 for r in occ)
    assert {r.vehicle_event for r in recs} == {"", "cruise", "new_online"}
    w = np.mean([r.search_time for r in occ]) / 60.0
    assert 0.1 < w < 2.0
    assert mm1_metrics(Mm1Spec(1.0, 2.0)).w == 1.0
