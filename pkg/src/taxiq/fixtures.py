"""Synthetic network configurations shipped with the package.

``configs/*.json`` in the repository are generated from these builders by
``scripts/make_fixtures.py``.
"""

from __future__ import annotations

import numpy as np

from .flow import with_consistent_portions
from .model import NetworkConfig, RoutingMatrices, ZoneParams


def _zone(**kw) -> ZoneParams:
    base = dict(
        lambda_p=4.0, p_ats=0.5, lambda_v_ats=1.0, lambda_v_tts=1.0,
        p_pick_ats=0.2, p_pick_tts=0.2, mu_ats=3.0, mu_tts=3.0,
        mu_road=1.0, c_road=4,
    )
    base.update(kw)
    return ZoneParams(**base)


def isolated() -> NetworkConfig:
    """One zone with no neighbours; every vehicle leaving the road exits."""
    return NetworkConfig(
        zones=("A",),
        adjacency=np.zeros((1, 1), dtype=bool),
        params=(_zone(lambda_p=4.0, lambda_v_ats=1.0, lambda_v_tts=1.5, mu_ats=3.0, mu_tts=3.0, c_road=4),),
        routing=RoutingMatrices.uniform([[0.0, 1.0]]),
    )


def two_zone() -> NetworkConfig:
    """Two symmetric zones sending all non-exiting flow to each other (exit 0.3)."""
    z = _zone(lambda_p=10.0, p_ats=0.5, lambda_v_ats=2.0, lambda_v_tts=2.0,
              p_pick_ats=0.2, p_pick_tts=0.2, mu_ats=6.0, mu_tts=6.0, mu_road=1.0, c_road=20)
    return NetworkConfig(
        zones=("A", "B"),
        adjacency=np.array([[0, 1], [1, 0]], dtype=bool),
        params=(z, z),
        routing=RoutingMatrices.uniform([[0.0, 0.7, 0.3], [0.7, 0.0, 0.3]]),
    )


def five_ring() -> NetworkConfig:
    """Five zones on a ring with class-dependent routing and mixed supply/demand regimes."""
    n = 5
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        adj[i, (i + 1) % n] = adj[i, (i - 1) % n] = True

    def ring(left, right):
        m = np.zeros((n, n + 1))
        for i in range(n):
            m[i, (i - 1) % n] = left
            m[i, (i + 1) % n] = right
            m[i, n] = 1.0 - left - right
        return m

    routing = RoutingMatrices(
        p_occ_ats=ring(0.30, 0.40),
        p_emp_ats=ring(0.35, 0.35),
        p_occ_tts=ring(0.40, 0.25),
        p_emp_tts=ring(0.30, 0.30),
    )
    lam_p = [12.0, 3.0, 8.0, 1.5, 6.0]
    p_ats = [0.6, 0.4, 0.5, 0.7, 0.55]
    lv_ats = [1.0, 2.5, 0.8, 1.2, 0.5]
    lv_tts = [1.5, 1.0, 0.6, 0.4, 0.9]
    params = tuple(
        _zone(lambda_p=lam_p[i], p_ats=p_ats[i], lambda_v_ats=lv_ats[i], lambda_v_tts=lv_tts[i],
              p_pick_ats=0.15 + 0.02 * i, p_pick_tts=0.10 + 0.03 * i,
              mu_ats=12.0, mu_tts=10.0, mu_road=1.5, c_road=30,
              portion_occ_ats=0.3, portion_emp_ats=0.2, portion_occ_tts=0.3, portion_emp_tts=0.2)
        for i in range(n)
    )
    return NetworkConfig(zones=tuple(f"Z{i}" for i in range(n)), adjacency=adj, params=params, routing=routing)


def single_zone_ctmc() -> NetworkConfig:
    """Demand-limited single zone: pair rates 1.0 (TTS) and 0.5 (ATS), road c=2, mu_r=1."""
    return NetworkConfig(
        zones=("A",),
        adjacency=np.zeros((1, 1), dtype=bool),
        params=(_zone(lambda_p=1.5, p_ats=1.0 / 3.0, lambda_v_ats=5.0, lambda_v_tts=5.0,
                      mu_ats=2.0, mu_tts=2.0, mu_road=1.0, c_road=2),),
        routing=RoutingMatrices.uniform([[0.0, 1.0]]),
    )


def single_zone_loop() -> NetworkConfig:
    """Supply-limited single zone whose road feeds back into itself (self-loop 0.3)."""
    return NetworkConfig(
        zones=("A",),
        adjacency=np.ones((1, 1), dtype=bool),
        params=(_zone(lambda_p=6.0, p_ats=0.5, lambda_v_ats=0.3, lambda_v_tts=0.6,
                      p_pick_ats=0.2, p_pick_tts=0.2, mu_ats=2.0, mu_tts=2.0, mu_road=1.0, c_road=2),),
        routing=RoutingMatrices.uniform([[0.3, 0.7]]),
        allow_self_loops=True,
    )


def roundtrip_two_zone() -> NetworkConfig:
    """Supply-limited asymmetric pair with class-dependent routing and consistent portions."""
    routing = RoutingMatrices(
        p_occ_ats=[[0.0, 0.75, 0.25], [0.70, 0.0, 0.30]],
        p_emp_ats=[[0.0, 0.60, 0.40], [0.65, 0.0, 0.35]],
        p_occ_tts=[[0.0, 0.70, 0.30], [0.60, 0.0, 0.40]],
        p_emp_tts=[[0.0, 0.55, 0.45], [0.50, 0.0, 0.50]],
    )
    a = _zone(lambda_p=8.0, p_ats=0.6, lambda_v_ats=1.5, lambda_v_tts=1.0,
              p_pick_ats=0.25, p_pick_tts=0.15, mu_ats=5.0, mu_tts=4.0, mu_road=2.0, c_road=12)
    b = _zone(lambda_p=6.0, p_ats=0.5, lambda_v_ats=1.0, lambda_v_tts=0.8,
              p_pick_ats=0.2, p_pick_tts=0.2, mu_ats=4.0, mu_tts=4.0, mu_road=2.0, c_road=10)
    cfg = NetworkConfig(
        zones=("A", "B"),
        adjacency=np.array([[0, 1], [1, 0]], dtype=bool),
        params=(a, b),
        routing=routing,
    )
    return with_consistent_portions(cfg)


ALL = {
    "isolated": isolated,
    "two_zone": two_zone,
    "five_ring": five_ring,
    "single_zone_ctmc": single_zone_ctmc,
    "single_zone_loop": single_zone_loop,
    "roundtrip_two_zone": roundtrip_two_zone,
}

# fixtures the flow-balance cross-check runs on
FLOW_FIXTURES = ("isolated", "two_zone", "five_ring")


def get(name: str) -> NetworkConfig:
    return ALL[name]()
