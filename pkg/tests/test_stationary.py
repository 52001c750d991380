import itertools
import math

import numpy as np
import pytest

from taxiq import fixtures
from taxiq.errors import NotStable, StateSpaceTooLarge
from taxiq.flow import solve_fixed_point
from taxiq.model import NetworkConfig, RoutingMatrices, ZoneParams
from taxiq.road import MmcSpec, mmc_p0
from taxiq.stationary import (NetworkState, auto_caps, build_generator, check_stability, ctmc_stationary,
                              global_balance_residual, marginal, normalizer, stationary_prob, total_variation,
                              truncated_distribution)


def solved(name):
    cfg = fixtures.get(name)
    return cfg, solve_fixed_point(cfg)


def small_zone(mu_road=1.0, c=2, lam_v_tts=1.0):
    p = ZoneParams(lambda_p=10.0, p_ats=0.5, lambda_v_ats=0.0, lambda_v_tts=lam_v_tts, p_pick_ats=0.0,
                   p_pick_tts=0.0, mu_ats=2.0, mu_tts=2.0, mu_road=mu_road, c_road=c)
    return NetworkConfig(("A",), np.zeros((1, 1), bool), (p,), RoutingMatrices.uniform([[0.0, 1.0]]))


def test_stability_ratios():
    cfg = small_zone()
    rep = check_stability(cfg, solve_fixed_point(cfg))
    z = rep.zones[0]
    assert rep.stable and (z.rho_match_tts, z.rho_match_ats, z.rho_road) == (0.5, 0.0, 0.5)


def test_stability_boundary():
    cfg = small_zone(mu_road=0.5, c=2)
    rep = check_stability(cfg, solve_fixed_point(cfg))
    assert not rep.stable and rep.unstable_queues() == ["A:road"]
    with pytest.raises(NotStable):
        stationary_prob(NetworkState.zeros(1), cfg, solve_fixed_point(cfg))


def test_zero_state_is_normalizer():
    cfg, fl = solved("two_zone")
    assert stationary_prob(NetworkState.zeros(2), cfg, fl) == pytest.approx(normalizer(cfg, fl), rel=1e-14)


def test_normalizer_factorises():
    cfg, fl = solved("five_ring")
    want = 1.0
    for i, p in enumerate(cfg.params):
        want *= (1 - fl.lambda_pv_ats[i] / p.mu_ats) * (1 - fl.lambda_pv_tts[i] / p.mu_tts)
        want *= mmc_p0(MmcSpec(fl.lambda_road[i], p.mu_road, p.c_road))
    assert normalizer(cfg, fl) == pytest.approx(want, rel=1e-12)


def test_only_road_total_matters():
    cfg, fl = solved("single_zone_ctmc")
    base = stationary_prob(NetworkState([[1, 2, 3, 0, 1, 1]]), cfg, fl)
    for perm in itertools.permutations([3, 0, 1, 1]):
        assert stationary_prob(NetworkState([[1, 2, *perm]]), cfg, fl) == base
    assert stationary_prob(NetworkState([[1, 2, 5, 0, 0, 0]]), cfg, fl) == base


def test_caps_zero_single_state():
    cfg, fl = solved("single_zone_ctmc")
    t = truncated_distribution(cfg, fl, caps=0)
    assert len(t.probs) == 1
    assert t.probs[0] == pytest.approx(normalizer(cfg, fl), rel=1e-14)
    assert t.tail_mass == pytest.approx(1 - normalizer(cfg, fl), rel=1e-12)


def test_caps_sixty_tail_small():
    cfg, fl = solved("single_zone_ctmc")
    t = truncated_distribution(cfg, fl, caps=60)
    assert 0 <= t.tail_mass < 1e-6
    assert t.probs.sum() + t.tail_mass >= 1 - 1e-9


def test_matching_marginals_geometric():
    cfg, fl = solved("single_zone_ctmc")
    # mass cut from the other coordinates shows up in each marginal, so cap tightly
    t = truncated_distribution(cfg, fl, auto_caps(cfg, fl, tail=1e-11))
    for coord, (lam, mu) in ((0, (fl.lambda_pv_tts[0], 2.0)), (1, (fl.lambda_pv_ats[0], 2.0))):
        rho = lam / mu
        m = marginal(t, 0, coord)
        x = np.arange(m.size)
        assert np.max(np.abs(m - (1 - rho) * rho**x)) < 1e-8


def test_state_space_limit():
    cfg, fl = solved("two_zone")
    with pytest.raises(StateSpaceTooLarge):
        truncated_distribution(cfg, fl, caps=200)


def test_auto_caps_meet_tail():
    cfg, fl = solved("single_zone_ctmc")
    caps = auto_caps(cfg, fl, tail=1e-8)
    rho = fl.lambda_pv_tts[0] / 2.0
    assert rho ** (caps[0, 0] + 1) < 1e-8 <= rho ** caps[0, 0]


@pytest.mark.parametrize("name", ["single_zone_ctmc", "single_zone_loop"])
def test_product_form_matches_ctmc(name):
    cfg, fl = solved(name)
    caps = auto_caps(cfg, fl, tail=1e-6)
    q, states = build_generator(cfg, fl, caps)
    pi = ctmc_stationary(q)
    table = truncated_distribution(cfg, fl, caps)
    assert np.array_equal(states, table.states)
    assert total_variation(pi, table.probs) < 1e-4
    assert global_balance_residual(q, table.probs, states, caps) < 1e-8


def test_generator_rows_sum_to_zero():
    cfg, fl = solved("single_zone_loop")
    q, _ = build_generator(cfg, fl, [[5, 5, 8]])
    assert np.max(np.abs(np.asarray(q.sum(axis=1)).ravel())) < 1e-12
    assert math.isclose(ctmc_stationary(q).sum(), 1.0)
