"""Per-queue and network-wide performance metrics under the stationary law."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NotStable
from .flow import FlowSolution
from .matching import Mm1Spec, QueueMetrics, mm1_metrics
from .model import NetworkConfig
from .road import MmcSpec, mmc_metrics
from .stationary import check_stability

QUEUES = ("ats", "tts", "road")


@dataclass(frozen=True)
class ZoneMetrics:
    zone: str
    ats: QueueMetrics
    tts: QueueMetrics
    road: QueueMetrics

    def queue(self, name: str) -> QueueMetrics:
        return getattr(self, name)


@dataclass(frozen=True)
class NetworkMetrics:
    zones: tuple[ZoneMetrics, ...]
    l_network: float
    gamma: float
    w_network: float


def _matching(lam: float, mu: float) -> QueueMetrics:
    if lam == 0 and mu <= 0:
        return QueueMetrics(0.0, 0.0, 0.0, math.nan, 0.0)
    return mm1_metrics(Mm1Spec(lam, mu))


def network_metrics(config: NetworkConfig, flows: FlowSolution) -> NetworkMetrics:
    """Every matching/road metric per zone plus L_I, gamma_I and W_I = L_I / gamma_I."""
    rep = check_stability(config, flows)
    if not rep.stable:
        bad = rep.unstable_queues()
        raise NotStable(f"unstable queues: {', '.join(bad)}", bad)
    zones = []
    for i, (z, p) in enumerate(zip(config.zones, config.params)):
        zones.append(ZoneMetrics(
            zone=z,
            ats=_matching(float(flows.lambda_pv_ats[i]), p.mu_ats),
            tts=_matching(float(flows.lambda_pv_tts[i]), p.mu_tts),
            road=mmc_metrics(MmcSpec(float(flows.lambda_road[i]), p.mu_road, p.c_road)),
        ))
    l_net = sum(zm.road.l for zm in zones) + sum(zm.ats.l + zm.tts.l for zm in zones)
    gamma = float((flows.lambda_hat_v_tts + flows.lambda_hat_v_ats).sum())
    w_net = l_net / gamma if gamma > 0 else math.nan
    return NetworkMetrics(tuple(zones), l_net, gamma, w_net)
