"""Product-form stationary distribution of the approximated network.

Each zone contributes two geometric factors (the matching queues under the
M/M/1 approximation) and one M/M/c factor for its road queue. Road vehicle
classes enter only through the road total x_i = sum of the four class counts;
``stationary_prob`` is the probability of the matching counts together with
that road total.

The module also builds the truncated CTMC generator of the same network
(transition families: pair arrivals, matched departures to the road,
road-to-road moves, road-to-matching pickups, exits) as an independent
oracle for the closed form.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gammaln

from .errors import NotStable, StateSpaceTooLarge
from .flow import FlowSolution, SERVICES, exit_mass, inflow_matrix
from .model import NetworkConfig

STATE_FIELDS = ("x_tts", "x_ats", "x_occ_tts", "x_emp_tts", "x_occ_ats", "x_emp_ats")
MAX_STATES = 10**7
TAIL_TOL = 1e-8


@dataclass(frozen=True)
class ZoneStability:
    zone: str
    rho_match_ats: float
    rho_match_tts: float
    rho_road: float

    @property
    def stable(self) -> bool:
        return self.rho_match_ats < 1 and self.rho_match_tts < 1 and self.rho_road < 1


@dataclass(frozen=True)
class StabilityReport:
    zones: tuple[ZoneStability, ...]

    @property
    def stable(self) -> bool:
        return all(z.stable for z in self.zones)

    def unstable_queues(self) -> list[str]:
        out = []
        for z in self.zones:
            for q, r in (("ats", z.rho_match_ats), ("tts", z.rho_match_tts), ("road", z.rho_road)):
                if r >= 1:
                    out.append(f"{z.zone}:{q}")
        return out


def check_stability(config: NetworkConfig, flows: FlowSolution) -> StabilityReport:
    zs = []
    for i, (z, p) in enumerate(zip(config.zones, config.params)):
        zs.append(ZoneStability(
            zone=z,
            rho_match_ats=_ratio(flows.lambda_pv_ats[i], p.mu_ats),
            rho_match_tts=_ratio(flows.lambda_pv_tts[i], p.mu_tts),
            rho_road=_ratio(flows.lambda_road[i], p.c_road * p.mu_road),
        ))
    return StabilityReport(tuple(zs))


def _ratio(lam, cap):
    if lam == 0:
        return 0.0
    return math.inf if cap <= 0 else float(lam / cap)


def _require_stable(config, flows) -> StabilityReport:
    rep = check_stability(config, flows)
    if not rep.stable:
        bad = rep.unstable_queues()
        raise NotStable(f"unstable queues: {', '.join(bad)}", bad)
    return rep


@dataclass(frozen=True, eq=False)
class NetworkState:
    """Occupancy counts, one row per zone, columns in STATE_FIELDS order."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64).reshape(-1, len(STATE_FIELDS))
        if np.any(c < 0):
            raise ValueError("occupancy counts must be >= 0")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def zeros(cls, n: int) -> "NetworkState":
        return cls(np.zeros((n, len(STATE_FIELDS)), dtype=np.int64))

    @classmethod
    def from_zones(cls, rows) -> "NetworkState":
        return cls([[r.get(f, 0) for f in STATE_FIELDS] for r in rows])

    @property
    def x_tts(self):
        return self.counts[:, 0]

    @property
    def x_ats(self):
        return self.counts[:, 1]

    @property
    def x_road(self):
        return self.counts[:, 2:].sum(axis=1)


# ---------------------------------------------------------------------------
# closed form


def _log_road_term(x, r, c):
    """log of r^x/x! (x < c) or r^x/(c^(x-c) c!) (x >= c), vectorized over x."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        lr = np.log(r) if r > 0 else -np.inf
    low = x * lr - gammaln(x + 1)
    high = x * lr - (x - c) * math.log(c) - math.lgamma(c + 1)
    out = np.where(x < c, low, high)
    if r == 0:
        out = np.where(x == 0, 0.0, -np.inf)
    return out


def road_p0(lam: float, mu: float, c: int) -> float:
    """Empty-road probability [sum_{n<c} r^n/n! + r^c/((c-1)! (c - r))]^-1."""
    r = lam / mu
    if r == 0:
        return 1.0
    terms = [n * math.log(r) - math.lgamma(n + 1) for n in range(c)]
    terms.append(c * math.log(r) - math.lgamma(c) - math.log(c - r))
    m = max(terms)
    return math.exp(-(m + math.log(sum(math.exp(t - m) for t in terms))))


def _zone_rates(config, flows):
    rho_tts = np.array([flows.lambda_pv_tts[i] / p.mu_tts if flows.lambda_pv_tts[i] > 0 else 0.0
                        for i, p in enumerate(config.params)])
    rho_ats = np.array([flows.lambda_pv_ats[i] / p.mu_ats if flows.lambda_pv_ats[i] > 0 else 0.0
                        for i, p in enumerate(config.params)])
    r_road = np.array([flows.lambda_road[i] / p.mu_road if flows.lambda_road[i] > 0 else 0.0
                       for i, p in enumerate(config.params)])
    c = np.array([p.c_road for p in config.params])
    return rho_tts, rho_ats, r_road, c


def log_normalizer(config: NetworkConfig, flows: FlowSolution) -> float:
    """log pi(phi), the probability of the empty network."""
    _require_stable(config, flows)
    rho_tts, rho_ats, r_road, c = _zone_rates(config, flows)
    total = 0.0
    for i, p in enumerate(config.params):
        total += math.log1p(-rho_tts[i]) + math.log1p(-rho_ats[i])
        total += math.log(road_p0(flows.lambda_road[i], p.mu_road, p.c_road))
    return total


def normalizer(config: NetworkConfig, flows: FlowSolution) -> float:
    return math.exp(log_normalizer(config, flows))


def _log_prob_coords(config, flows, x_tts, x_ats, x_road, log_phi):
    """Vectorized log-probability over aggregated coordinates, arrays shaped (..., n)."""
    rho_tts, rho_ats, r_road, c = _zone_rates(config, flows)
    out = np.full(np.shape(x_tts)[:-1], log_phi, dtype=float)
    for i in range(config.n):
        for rho, x in ((rho_tts[i], x_tts[..., i]), (rho_ats[i], x_ats[..., i])):
            if rho > 0:
                out = out + x * math.log(rho)
            else:
                out = np.where(x == 0, out, -np.inf)
        out = out + _log_road_term(x_road[..., i], r_road[i], int(c[i]))
    return out


def stationary_prob(state: NetworkState, config: NetworkConfig, flows: FlowSolution) -> float:
    if state.counts.shape[0] != config.n:
        raise ValueError("state has wrong number of zones")
    log_phi = log_normalizer(config, flows)
    lp = _log_prob_coords(
        config, flows,
        state.x_tts[None, :], state.x_ats[None, :], state.x_road[None, :], log_phi,
    )
    return float(np.exp(lp[0]))


# ---------------------------------------------------------------------------
# truncated lattice


def _coordinate_tail(config, flows, i, kind, cap):
    rho_tts, rho_ats, r_road, c = _zone_rates(config, flows)
    if kind == "tts":
        return rho_tts[i] ** (cap + 1)
    if kind == "ats":
        return rho_ats[i] ** (cap + 1)
    xs = np.arange(cap + 1)
    p0 = road_p0(flows.lambda_road[i], config.params[i].mu_road, int(c[i]))
    mass = float(np.exp(_log_road_term(xs, r_road[i], int(c[i]))).sum() * p0)
    return max(0.0, 1.0 - mass)


def auto_caps(config: NetworkConfig, flows: FlowSolution, tail: float = TAIL_TOL) -> np.ndarray:
    """Smallest per-coordinate caps whose marginal tail mass is below ``tail``.

    Returns an (n, 3) integer array: matching TTS, matching ATS, road total.
    """
    _require_stable(config, flows)
    caps = np.zeros((config.n, 3), dtype=int)
    for i in range(config.n):
        for k, kind in enumerate(("tts", "ats", "road")):
            cap = 0
            while _coordinate_tail(config, flows, i, kind, cap) >= tail:
                cap += 1 if cap < 64 else max(1, cap // 8)
            caps[i, k] = cap
    return caps


@dataclass(frozen=True, eq=False)
class TruncatedTable:
    """Aggregated states (x_tts, x_ats, x_road per zone) with their probabilities."""

    zones: tuple[str, ...]
    caps: np.ndarray
    states: np.ndarray  # (N, n, 3)
    probs: np.ndarray  # (N,)
    tail_mass: float


def _lattice(caps: np.ndarray) -> np.ndarray:
    flat = caps.reshape(-1)
    size = int(np.prod(flat + 1, dtype=object))
    if size > MAX_STATES:
        raise StateSpaceTooLarge(f"{size} states exceed the limit of {MAX_STATES}")
    grids = np.indices(tuple(int(c) + 1 for c in flat)).reshape(len(flat), -1).T
    return grids.reshape(-1, *caps.shape)


def truncated_distribution(config: NetworkConfig, flows: FlowSolution, caps=None) -> TruncatedTable:
    """Enumerate the capped lattice and evaluate the product form at every state.

    ``caps`` is an (n, 3) array (or a scalar applied to all coordinates);
    None picks ``auto_caps``. Tail mass is 1 minus the enumerated total.
    """
    log_phi = log_normalizer(config, flows)
    if caps is None:
        caps = auto_caps(config, flows)
    caps = np.broadcast_to(np.asarray(caps, dtype=int), (config.n, 3)).copy()
    states = _lattice(caps)
    lp = _log_prob_coords(config, flows, states[..., 0], states[..., 1], states[..., 2], log_phi)
    probs = np.exp(lp)
    return TruncatedTable(config.zones, caps, states, probs, float(1.0 - probs.sum()))


# ---------------------------------------------------------------------------
# CTMC oracle


def _regimes(config, flows):
    """Per (zone, service): True if the vehicle side is the binding branch."""
    out = {}
    for s in SERVICES:
        hat = flows.lambda_hat_v(s)
        demand = config.vec("lambda_p") * config.vec(f"p_{s}")
        out[s] = hat <= demand
    return out


def build_generator(config: NetworkConfig, flows: FlowSolution, caps) -> tuple[sp.csr_matrix, np.ndarray]:
    """Truncated generator on aggregated states; transitions leaving the caps are dropped.

    Matching queue (i, s) receives external pairs at lambda_v_s when the
    vehicle side binds (road arrivals then feed it with probability p_pick_s)
    and at p_s * lambda_p otherwise (arriving road vehicles then wait in the
    surplus buffer and leave the network flow).
    """
    n = config.n
    caps = np.broadcast_to(np.asarray(caps, dtype=int), (n, 3)).copy()
    states = _lattice(caps).reshape(-1, 3 * n)
    radix = (caps + 1).reshape(-1)
    mult = np.concatenate([np.cumprod(radix[::-1])[::-1][1:], [1]])
    idx = states @ mult
    nstate = len(states)
    w = inflow_matrix(config)
    ex = exit_mass(config)
    supply = _regimes(config, flows)
    col = {"tts": 0, "ats": 1, "road": 2}

    rows, cols, vals = [], [], []

    def add(rate, delta):
        rate = np.broadcast_to(np.asarray(rate, dtype=float), (nstate,))
        tgt = states + delta
        ok = (rate > 0) & np.all((tgt >= 0) & (tgt < radix), axis=1)
        rows.append(idx[ok])
        cols.append(tgt[ok] @ mult)
        vals.append(rate[ok])

    def unit(*pairs):
        d = np.zeros(3 * n, dtype=int)
        for zone, kind, step in pairs:
            d[3 * zone + col[kind]] += step
        return d

    for i, p in enumerate(config.params):
        busy = np.minimum(states[:, 3 * i + 2], p.c_road) * p.mu_road
        for s in SERVICES:
            lam_ext = getattr(p, f"lambda_v_{s}") if supply[s][i] else p.lambda_p * getattr(p, f"p_{s}")
            mu_s = getattr(p, f"mu_{s}")
            if flows.lambda_pv(s)[i] > 0:
                add(lam_ext, unit((i, s, +1)))
                add(np.where(states[:, 3 * i + col[s]] > 0, mu_s, 0.0), unit((i, s, -1), (i, "road", +1)))
        add(busy * ex[i], unit((i, "road", -1)))
        for k in range(n):
            if w[i, k] == 0:
                continue
            q = config.params[k]
            add(busy * w[i, k] * q.p_pass, unit((i, "road", -1), (k, "road", +1)))
            for s in SERVICES:
                pick = busy * w[i, k] * getattr(q, f"p_pick_{s}")
                if supply[s][k] and flows.lambda_pv(s)[k] > 0:
                    add(pick, unit((i, "road", -1), (k, s, +1)))
                else:
                    add(pick, unit((i, "road", -1)))

    r = np.concatenate(rows)
    c_ = np.concatenate(cols)
    v = np.concatenate(vals)
    off = sp.coo_matrix((v, (r, c_)), shape=(nstate, nstate)).tocsr()
    off.setdiag(0)
    off.eliminate_zeros()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    q = (off + sp.diags(diag)).tocsr()
    return q, states.reshape(-1, n, 3)


def ctmc_stationary(q: sp.csr_matrix) -> np.ndarray:
    """Solve pi Q = 0 with sum(pi) = 1.

    Pins pi(0) = 1 and drops state 0's balance equation (redundant for an
    irreducible chain), which keeps the system sparse; then normalizes.
    """
    a = q.T.tocsc()
    rhs = -np.asarray(a[1:, 0].todense()).ravel()
    x = spla.spsolve(a[1:, 1:].tocsc(), rhs) if q.shape[0] > 1 else np.zeros(0)
    pi = np.clip(np.concatenate([[1.0], np.atleast_1d(x)]), 0.0, None)
    return pi / pi.sum()


def global_balance_residual(q: sp.csr_matrix, probs: np.ndarray, states: np.ndarray, caps) -> float:
    """max |(pi Q)_x| over states strictly inside the caps."""
    caps = np.asarray(caps)
    interior = np.all(states < caps[None, ...], axis=(1, 2))
    res = q.T @ probs
    return float(np.max(np.abs(res[interior]))) if interior.any() else 0.0


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def marginal(table: TruncatedTable, zone: int, coord: int) -> np.ndarray:
    cap = int(table.caps[zone, coord])
    return np.bincount(table.states[:, zone, coord], weights=table.probs, minlength=cap + 1)


def iter_rows(table: TruncatedTable):
    """(zone-major flattened coordinates, probability) for CSV output."""
    for st, p in zip(table.states, table.probs):
        yield list(itertools.chain.from_iterable(st.tolist())), float(p)
