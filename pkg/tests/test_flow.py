import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import picard
from taxiq import fixtures
from taxiq.errors import NonConvergence
from taxiq.flow import (class_flows, effective_rates, exit_mass, fixed_point_map, inflow_matrix, inflow_weight,
                        multistart_divergence, solve_fixed_point, solve_lp, total_exit_flow)
from taxiq.model import NetworkConfig, RoutingMatrices, ZoneParams, validate_network


def test_two_zone_frozen():
    # symmetric: F = 0.7 (4 + F)  =>  F = 28/3, pair rate 2 + 0.2 F = 58/15
    sol = solve_fixed_point(fixtures.two_zone())
    assert np.allclose(sol.f_in, 28 / 3, rtol=0, atol=1e-12)
    assert np.allclose(sol.lambda_pv_ats, 58 / 15, atol=1e-12)
    assert np.allclose(sol.lambda_road, 4 + 28 / 3, atol=1e-12)


def test_isolated_zone():
    cfg = fixtures.isolated()
    sol = solve_fixed_point(cfg)
    p = cfg.params[0]
    assert sol.f_in[0] == 0
    assert sol.lambda_pv_tts[0] == min(p.lambda_v_tts, (1 - p.p_ats) * p.lambda_p)
    assert sol.lambda_pv_ats[0] == min(p.lambda_v_ats, p.p_ats * p.lambda_p)
    assert np.array_equal(sol.lambda_hat_v_ats, cfg.vec("lambda_v_ats"))


def test_inflow_weight():
    cfg = fixtures.two_zone()
    assert inflow_weight(cfg, 0, 0) == 0.0
    assert inflow_weight(cfg, 0, 1) == pytest.approx(0.7)
    with pytest.raises(IndexError):
        inflow_weight(cfg, 0, 2)
    n = 2
    row = [[0.0, 0.25, 0.75], [0.25, 0.0, 0.75]]
    q = NetworkConfig(cfg.zones, cfg.adjacency, cfg.params, RoutingMatrices.uniform(row))
    assert inflow_weight(q, 1, 0) == 0.25
    assert np.allclose(inflow_matrix(q), [[0, 0.25], [0.25, 0]])
    assert n == q.n


@pytest.mark.parametrize("name", fixtures.FLOW_FIXTURES + ("single_zone_loop", "roundtrip_two_zone"))
def test_lp_agrees(name):
    cfg = fixtures.get(name)
    a, b = solve_fixed_point(cfg), solve_lp(cfg)
    for f in ("lambda_pv_ats", "lambda_pv_tts", "f_in"):
        assert np.max(np.abs(getattr(a, f) - getattr(b, f))) < 1e-7


def test_two_zone_matches_damped_iteration_from_random_starts():
    cfg = fixtures.two_zone()
    sol = solve_fixed_point(cfg)
    rng = np.random.default_rng(0)
    for _ in range(5):
        f = picard(cfg, rng.uniform(0, 100, 2), steps=4000, damping=0.5)
        assert np.max(np.abs(f - sol.f_in)) < 1e-12


def test_acyclic_flow_two_iterations():
    cfg = fixtures.two_zone()
    # A sends everything to B, B sends everything out
    one_hop = RoutingMatrices.uniform([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    sol = solve_fixed_point(cfg.replace(routing=one_hop), polish=False)
    assert sol.iterations == 2 and sol.residual == 0.0
    assert sol.f_in[0] == 0.0 and sol.f_in[1] == sol.f_out[0]


def test_supply_exceeds_demand():
    cfg = fixtures.two_zone().with_params(lambda_v_ats=50.0, lambda_v_tts=50.0)
    sol = solve_lp(cfg)
    assert np.allclose(sol.lambda_pv_ats, cfg.vec("p_ats") * cfg.vec("lambda_p"), atol=1e-9)
    assert np.allclose(sol.lambda_pv_tts, cfg.vec("p_tts") * cfg.vec("lambda_p"), atol=1e-9)


def test_effective_rates_examples():
    cfg = fixtures.two_zone().with_params(p_pick_ats=0.5, p_pick_tts=0.5)
    sol = solve_fixed_point(cfg)
    assert np.allclose(sol.lambda_road, sol.lambda_pv_ats + sol.lambda_pv_tts, atol=1e-12)
    sol = solve_fixed_point(fixtures.five_ring())
    assert np.array_equal(sol.lambda_road, sol.f_out)


@pytest.mark.parametrize("name", sorted(fixtures.ALL))
def test_solution_invariants(name):
    cfg = fixtures.get(name)
    sol = solve_fixed_point(cfg)
    for s in ("ats", "tts"):
        want = np.minimum(sol.lambda_hat_v(s), cfg.vec(f"p_{s}") * cfg.vec("lambda_p"))
        assert np.max(np.abs(sol.lambda_pv(s) - want)) < 1e-8
    f_out = sol.lambda_pv_ats + sol.lambda_pv_tts + cfg.vec("p_pass") * sol.f_in
    assert np.max(np.abs(sol.f_out - f_out)) < 1e-8
    assert np.max(np.abs(inflow_matrix(cfg).T @ sol.f_out - sol.f_in)) < 1e-8
    assert multistart_divergence(cfg) < 1e-9


@pytest.mark.parametrize("name", ["two_zone", "five_ring", "roundtrip_two_zone", "single_zone_loop"])
def test_global_conservation(name):
    cfg = fixtures.get(name)
    sol = solve_fixed_point(cfg)
    # in the supply-limited regime every arriving vehicle is eventually matched
    if name in ("roundtrip_two_zone", "single_zone_loop"):
        ext = float(cfg.vec("lambda_v_ats").sum() + cfg.vec("lambda_v_tts").sum())
        assert abs(ext - total_exit_flow(cfg, sol)) < 1e-6
    else:
        # demand-limited zones absorb the surplus vehicles; exit flow is only bounded
        ext = float(cfg.vec("lambda_v_ats").sum() + cfg.vec("lambda_v_tts").sum())
        assert total_exit_flow(cfg, sol) <= ext + sum(sol.f_in * cfg.vec("p_pick_ats")
                                                      + sol.f_in * cfg.vec("p_pick_tts")) + 1e-9


def test_class_flows_sum_to_road_rate():
    cfg = fixtures.roundtrip_two_zone()
    sol = solve_fixed_point(cfg)
    assert np.allclose(class_flows(cfg, sol).sum(axis=1), sol.lambda_road, atol=1e-10)
    por = class_flows(cfg, sol) / sol.lambda_road[:, None]
    assert np.allclose(por, [p.portions() for p in cfg.params], atol=1e-9)


def test_no_leakage_does_not_converge():
    cfg = fixtures.two_zone()
    closed = RoutingMatrices.uniform([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    cfg = cfg.replace(routing=closed).with_params(p_pick_ats=0.0, p_pick_tts=0.0)
    with pytest.raises(NonConvergence):
        solve_fixed_point(cfg, max_iter=2000)


@st.composite
def random_configs(draw, n_max=4):
    n = draw(st.integers(1, n_max))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    adj = rng.random((n, n)) < 0.7
    np.fill_diagonal(adj, False)
    mats = []
    for _ in range(4):
        m = rng.random((n, n + 1)) * np.concatenate([adj, np.ones((n, 1), bool)], axis=1)
        m[:, n] += 0.05
        mats.append(m / m.sum(axis=1, keepdims=True))
    params = []
    for _ in range(n):
        a, b = rng.random(2) * 0.5
        por = rng.dirichlet(np.ones(4))
        params.append(ZoneParams(
            lambda_p=float(rng.uniform(0, 10)), p_ats=float(rng.random()),
            lambda_v_ats=float(rng.uniform(0, 3)), lambda_v_tts=float(rng.uniform(0, 3)),
            p_pick_ats=float(a), p_pick_tts=float(b), mu_ats=20.0, mu_tts=20.0, mu_road=1.0, c_road=50,
            portion_occ_ats=float(por[0]), portion_emp_ats=float(por[1]),
            portion_occ_tts=float(por[2]), portion_emp_tts=1.0 - float(por[:3].sum()),
        ))
    return NetworkConfig(tuple(f"z{i}" for i in range(n)), adj, tuple(params), RoutingMatrices(*mats))


@given(random_configs())
def test_weights_substochastic(cfg):
    assert validate_network(cfg).ok
    w = inflow_matrix(cfg)
    assert np.all(w.sum(axis=1) + exit_mass(cfg) <= 1 + 1e-9)


@given(random_configs(), st.integers(0, 1000))
def test_map_monotone(cfg, seed):
    rng = np.random.default_rng(seed)
    step = fixed_point_map(cfg)
    a = rng.uniform(0, 20, cfg.n)
    b = a + rng.uniform(0, 5, cfg.n)
    assert np.all(step(a) <= step(b) + 1e-12)


@given(random_configs())
def test_iterates_nondecreasing_and_lp_agrees(cfg):
    step = fixed_point_map(cfg)
    f = np.zeros(cfg.n)
    for _ in range(50):
        nxt = step(f)
        assert np.all(nxt >= f - 1e-12)
        f = nxt
    a, b = solve_fixed_point(cfg), solve_lp(cfg)
    assert np.max(np.abs(a.lambda_pv_ats - b.lambda_pv_ats)) < 1e-7
    assert np.max(np.abs(a.f_in - b.f_in)) < 1e-7
    again = effective_rates(cfg, a)
    assert np.array_equal(again.lambda_road, a.lambda_road)
