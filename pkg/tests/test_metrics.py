import pytest

from taxiq import fixtures
from taxiq.errors import NotStable
from taxiq.flow import solve_fixed_point
from taxiq.metrics import network_metrics


@pytest.mark.parametrize("name", ["isolated", "two_zone", "five_ring", "single_zone_ctmc"])
def test_network_totals(name):
    cfg = getattr(fixtures, name)()
    fl = solve_fixed_point(cfg)
    nm = network_metrics(cfg, fl)
    total = sum(z.ats.l + z.tts.l + z.road.l for z in nm.zones)
    assert nm.l_network == pytest.approx(total, rel=1e-12)
    assert nm.w_network == nm.l_network / nm.gamma
    assert nm.gamma == pytest.approx(float((fl.lambda_hat_v_ats + fl.lambda_hat_v_tts).sum()))


def test_isolated_zone_sum():
    cfg = fixtures.isolated()
    nm = network_metrics(cfg, solve_fixed_point(cfg))
    z = nm.zones[0]
    assert z.queue("ats") is z.ats
    assert nm.l_network == pytest.approx(z.ats.l + z.tts.l + z.road.l)


def test_little_law_per_queue():
    cfg = fixtures.two_zone()
    fl = solve_fixed_point(cfg)
    for i, z in enumerate(network_metrics(cfg, fl).zones):
        assert z.ats.l == pytest.approx(fl.lambda_pv_ats[i] * z.ats.w)
        assert z.road.l == pytest.approx(fl.lambda_road[i] * z.road.w)


def test_unstable_names_queues():
    cfg = fixtures.two_zone().with_params(mu_tts=3.5)
    with pytest.raises(NotStable) as exc:
        network_metrics(cfg, solve_fixed_point(cfg))
    assert "tts" in str(exc.value)
    assert exc.value.queues and all("tts" in q for q in exc.value.queues)
