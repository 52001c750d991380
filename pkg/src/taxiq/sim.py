"""Discrete-event simulation of the full network and of isolated matching queues.

Event semantics per replication:

* passengers arrive per zone (Poisson lambda_p) and join the ATS buffer with
  probability p_ats, the TTS buffer otherwise;
* new vehicles arrive per zone and service (Poisson lambda_v_s) and join the
  vehicle buffer of that service;
* the heads of a passenger and a vehicle buffer pair up FCFS and the pair
  waits for the single exponential(mu_s) matching server;
* a served pair leaves as an occupied vehicle onto the zone's road node
  (c exponential(mu_road) servers with a FCFS overflow queue);
* a road departure is routed by the row of its class matrix to a neighbour or
  to exit; on arrival a vehicle joins the ATS/TTS vehicle buffer with
  probability p_pick_ats/p_pick_tts and otherwise re-enters the road empty.

A vehicle carries the service label of the last matching queue it joined.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NotStable
from .flow import FlowSolution
from .matching import Mm1Spec, mm1_metrics
from .model import NetworkConfig
from .road import MmcSpec, mmc_metrics
from .stationary import check_stability

QUEUES = ("ats", "tts", "road")
METRICS = ("rho", "l", "lq", "w", "wq", "throughput", "arrival_rate", "p_empty")
EXIT_CLASSES = ("occ_ats", "emp_ats", "occ_tts", "emp_tts")
REL_TOL = 0.03

# event kinds double as tie-breaking ranks
_ROAD_DONE, _MATCH_DONE, _VEH_ARRIVAL, _PAX_ARRIVAL = 0, 1, 2, 3

# stream labels
_S_PAX, _S_SPLIT, _S_VEH, _S_MATCH, _S_ROAD, _S_ROUTE, _S_PICK = range(7)

_BLOCK = 4096


@dataclass(frozen=True)
class SimParams:
    horizon: float
    warmup: float | None = None
    seed: int = 0
    replications: int = 1

    def __post_init__(self):
        if self.warmup is None:
            object.__setattr__(self, "warmup", 0.1 * self.horizon)
        if not (self.horizon > self.warmup >= 0):
            raise ValueError("need horizon > warmup >= 0")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ValueError("replications must be an integer >= 1")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in 64 bits")


class _Stream:
    """Buffered draws from one independent generator."""

    __slots__ = ("gen", "kind", "buf", "pos")

    def __init__(self, seed: int, rep: int, label: tuple[int, ...], kind: str):
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(rep, *label))
        self.gen = np.random.Generator(np.random.PCG64(ss))
        self.kind = kind
        self.buf: list[float] = []
        self.pos = 0

    def __call__(self) -> float:
        if self.pos == len(self.buf):
            if self.kind == "exp":
                self.buf = self.gen.standard_exponential(_BLOCK).tolist()
            else:
                self.buf = self.gen.random(_BLOCK).tolist()
            self.pos = 0
        v = self.buf[self.pos]
        self.pos += 1
        return v


@dataclass
class RawTrip:
    """One road traversal or new-vehicle event, times in minutes."""

    service: str
    origin: int
    dest: int  # -1 for exit / not applicable
    start: float
    travel: float
    search: float | None
    event: str  # "", "cruise" or "new_online"
    vehicle: int


def _replication(config: NetworkConfig, params: SimParams, rep: int, record: bool = False):
    n = config.n
    horizon, warmup = float(params.horizon), float(params.warmup)
    seed = params.seed
    P = config.params

    lam_p = [p.lambda_p for p in P]
    p_ats = [p.p_ats for p in P]
    lam_v = [[p.lambda_v_ats, p.lambda_v_tts] for p in P]
    mu = [[p.mu_ats, p.mu_tts] for p in P]
    mu_r = [p.mu_road for p in P]
    c_r = [p.c_road for p in P]
    pick = [(p.p_pick_ats, p.p_pick_ats + p.p_pick_tts) for p in P]

    # cumulative routing rows per zone and class; destination n means exit
    stack = config.routing.stack()
    cum = [[np.cumsum(stack[k, i]).tolist() for k in range(4)] for i in range(n)]
    for i in range(n):
        for k in range(4):
            cum[i][k][-1] = math.inf

    s_pax = [_Stream(seed, rep, (_S_PAX, i), "exp") for i in range(n)]
    s_split = [_Stream(seed, rep, (_S_SPLIT, i), "uni") for i in range(n)]
    s_veh = [[_Stream(seed, rep, (_S_VEH, i, s), "exp") for s in range(2)] for i in range(n)]
    s_match = [[_Stream(seed, rep, (_S_MATCH, i, s), "exp") for s in range(2)] for i in range(n)]
    s_road = [_Stream(seed, rep, (_S_ROAD, i), "exp") for i in range(n)]
    s_route = [_Stream(seed, rep, (_S_ROUTE, i), "uni") for i in range(n)]
    s_pick = [_Stream(seed, rep, (_S_PICK, i), "uni") for i in range(n)]

    heap: list = []
    seq = 0

    def push(t, kind, a, b):
        nonlocal seq
        if t <= horizon:
            heapq.heappush(heap, (t, kind, seq, a, b))
            seq += 1

    # passenger buffers are counts with head/tail sequence numbers (FCFS)
    pax_head = [[0, 0] for _ in range(n)]
    pax_tail = [[0, 0] for _ in range(n)]
    vbuf = [[deque(), deque()] for _ in range(n)]
    pairq = [[deque(), deque()] for _ in range(n)]
    in_service: list[list] = [[None, None] for _ in range(n)]  # (formed, start, vid)
    roadq = [deque() for _ in range(n)]
    road_busy = [0] * n

    # vehicle attributes
    vtype: list[int] = []
    v_entry: list[float] = []
    v_start: list[float] = []
    v_occ: list[bool] = []
    v_search: list[float] = []

    # time-average accumulators per queue id q = 3*i + k
    nq = 3 * n
    last = [0.0] * nq
    a_sys = [0.0] * nq
    a_wait = [0.0] * nq
    a_busy = [0.0] * nq
    t_empty = [0.0] * nq
    sum_w = [0.0] * nq
    sum_wq = [0.0] * nq
    n_done = [0] * nq
    n_arr = [0] * nq
    n_out = [0] * nq

    def touch(q, t, n_sys, n_wait, busy):
        lo = last[q] if last[q] > warmup else warmup
        if t > lo:
            dt = t - lo
            a_sys[q] += n_sys * dt
            a_wait[q] += n_wait * dt
            a_busy[q] += busy * dt
            if n_sys == 0:
                t_empty[q] += dt
        last[q] = t

    def touch_match(i, s, t):
        busy = 1 if in_service[i][s] is not None else 0
        w = len(pairq[i][s])
        touch(3 * i + s, t, w + busy, w, busy)

    def touch_road(i, t):
        w = len(roadq[i])
        touch(3 * i + 2, t, road_busy[i] + w, w, road_busy[i])

    exits = [[0, 0, 0, 0] for _ in range(n)]
    ext_in = 0
    trips: list[RawTrip] = []

    def form_pair(i, s, vid, t):
        touch_match(i, s, t)
        if t >= warmup:
            n_arr[3 * i + s] += 1
        if in_service[i][s] is None:
            in_service[i][s] = (t, t, vid)
            push(t + s_match[i][s]() / mu[i][s], _MATCH_DONE, i, s)
        else:
            pairq[i][s].append((t, vid))

    def join_vehicle(i, s, vid, t):
        vtype[vid] = s
        if pax_tail[i][s] > pax_head[i][s]:
            pax_head[i][s] += 1
            form_pair(i, s, vid, t)
        else:
            vbuf[i][s].append(vid)

    def enter_road(i, vid, t):
        touch_road(i, t)
        if t >= warmup:
            n_arr[3 * i + 2] += 1
        v_entry[vid] = t
        if road_busy[i] < c_r[i]:
            road_busy[i] += 1
            assert road_busy[i] <= c_r[i]
            v_start[vid] = t
            push(t + s_road[i]() / mu_r[i], _ROAD_DONE, i, vid)
        else:
            roadq[i].append(vid)

    def arrive_zone(j, vid, t):
        u = s_pick[j]()
        a, b = pick[j]
        if u < a:
            join_vehicle(j, 0, vid, t)
        elif u < b:
            join_vehicle(j, 1, vid, t)
        else:
            v_occ[vid] = False
            enter_road(j, vid, t)

    for i in range(n):
        if lam_p[i] > 0:
            push(s_pax[i]() / lam_p[i], _PAX_ARRIVAL, i, 0)
        for s in range(2):
            if lam_v[i][s] > 0:
                push(s_veh[i][s]() / lam_v[i][s], _VEH_ARRIVAL, i, s)

    pop = heapq.heappop
    while heap:
        t, kind, _, i, b = pop(heap)
        if kind == _PAX_ARRIVAL:
            push(t + s_pax[i]() / lam_p[i], _PAX_ARRIVAL, i, 0)
            s = 0 if s_split[i]() < p_ats[i] else 1
            if vbuf[i][s]:
                form_pair(i, s, vbuf[i][s].popleft(), t)
            else:
                pax_tail[i][s] += 1
        elif kind == _VEH_ARRIVAL:
            s = b
            push(t + s_veh[i][s]() / lam_v[i][s], _VEH_ARRIVAL, i, s)
            vid = len(vtype)
            vtype.append(s)
            v_entry.append(0.0)
            v_start.append(0.0)
            v_occ.append(False)
            v_search.append(0.0)
            ext_in += 1
            if record and t >= warmup:
                trips.append(RawTrip(QUEUES[s], i, -1, t, 0.0, None, "new_online", vid))
            join_vehicle(i, s, vid, t)
        elif kind == _MATCH_DONE:
            s = b
            q = 3 * i + s
            touch_match(i, s, t)
            formed, start, vid = in_service[i][s]
            if formed >= warmup:
                sum_w[q] += t - formed
                sum_wq[q] += start - formed
                n_done[q] += 1
            if t >= warmup:
                n_out[q] += 1
            if pairq[i][s]:
                f2, v2 = pairq[i][s].popleft()
                in_service[i][s] = (f2, t, v2)
                push(t + s_match[i][s]() / mu[i][s], _MATCH_DONE, i, s)
            else:
                in_service[i][s] = None
            v_occ[vid] = True
            v_search[vid] = t - formed
            enter_road(i, vid, t)
        else:  # road departure
            vid = b
            q = 3 * i + 2
            touch_road(i, t)
            if v_entry[vid] >= warmup:
                sum_w[q] += t - v_entry[vid]
                sum_wq[q] += v_start[vid] - v_entry[vid]
                n_done[q] += 1
            if t >= warmup:
                n_out[q] += 1
            if roadq[i]:
                nxt = roadq[i].popleft()
                v_start[nxt] = t
                push(t + s_road[i]() / mu_r[i], _ROAD_DONE, i, nxt)
            else:
                road_busy[i] -= 1
            s = vtype[vid]
            cls = 2 * s + (0 if v_occ[vid] else 1)
            row = cum[i][cls]
            u = s_route[i]()
            j = 0
            while u >= row[j]:
                j += 1
            if record and v_entry[vid] >= warmup:
                trips.append(RawTrip(
                    QUEUES[s], i, j if j < n else -1, v_entry[vid], t - v_entry[vid],
                    v_search[vid] if v_occ[vid] else None, "" if v_occ[vid] else "cruise", vid,
                ))
            if j == n:
                exits[i][cls] += 1
            else:
                arrive_zone(j, vid, t)

    for i in range(n):
        for s in range(2):
            touch_match(i, s, horizon)
        touch_road(i, horizon)

    in_system = sum(len(vbuf[i][s]) + len(pairq[i][s]) + (in_service[i][s] is not None)
                    for i in range(n) for s in range(2))
    in_system += sum(len(roadq[i]) + road_busy[i] for i in range(n))
    n_exit = sum(map(sum, exits))
    assert ext_in == n_exit + in_system, "vehicle conservation violated"

    span = horizon - warmup
    out = {m: np.full((n, 3), np.nan) for m in METRICS}
    for i in range(n):
        for k in range(3):
            q = 3 * i + k
            servers = 1 if k < 2 else c_r[i]
            out["rho"][i, k] = a_busy[q] / span / servers
            out["l"][i, k] = a_sys[q] / span
            out["lq"][i, k] = a_wait[q] / span
            if n_done[q]:
                out["w"][i, k] = sum_w[q] / n_done[q]
                out["wq"][i, k] = sum_wq[q] / n_done[q]
            out["throughput"][i, k] = n_out[q] / span
            out["arrival_rate"][i, k] = n_arr[q] / span
            out["p_empty"][i, k] = t_empty[q] / span
    out["exits"] = np.array(exits, dtype=np.int64)
    out["passenger_backlog"] = np.array(
        [[pax_tail[i][s] - pax_head[i][s] for s in range(2)] for i in range(n)], dtype=np.int64)
    out["vehicle_backlog"] = np.array([[len(vbuf[i][s]) for s in range(2)] for i in range(n)], dtype=np.int64)
    out["vehicles_in"] = ext_in
    out["in_system"] = in_system
    return out, trips


@dataclass(frozen=True, eq=False)
class SimReport:
    """Per-replication estimates; arrays are indexed (replication, zone, queue)."""

    zones: tuple[str, ...]
    params: SimParams
    values: dict  # metric -> array (R, n, 3)
    exits: np.ndarray  # (R, n, 4)
    passenger_backlog: np.ndarray  # (R, n, 2)
    vehicle_backlog: np.ndarray  # (R, n, 2)
    vehicles_in: np.ndarray  # (R,)
    in_system: np.ndarray  # (R,)

    def mean(self, metric: str) -> np.ndarray:
        return _nanmean(self.values[metric])

    def se(self, metric: str) -> np.ndarray:
        v = self.values[metric]
        r = np.sum(~np.isnan(v), axis=0)
        out = np.full(v.shape[1:], np.nan)
        ok = r > 1
        if ok.any():
            with np.errstate(invalid="ignore"):
                sd = _nanstd(v)
            out[ok] = sd[ok] / np.sqrt(r[ok])
        return out

    def total_occupancy(self) -> np.ndarray:
        """Time-average number of vehicles in matching and road queues, per replication."""
        return np.nansum(self.values["l"], axis=(1, 2))

    def rows(self):
        for i, z in enumerate(self.zones):
            for k, q in enumerate(QUEUES):
                row = {"zone": z, "queue": q}
                for m in METRICS:
                    row[m] = float(self.mean(m)[i, k])
                    row[f"{m}_se"] = float(self.se(m)[i, k])
                yield row


def _nanmean(v):
    cnt = np.sum(~np.isnan(v), axis=0)
    tot = np.nansum(v, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)


def _nanstd(v):
    cnt = np.sum(~np.isnan(v), axis=0)
    m = _nanmean(v)
    dev = np.where(np.isnan(v), 0.0, v - m)
    return np.sqrt(np.sum(dev**2, axis=0) / np.maximum(cnt - 1, 1))


def _run_rep(args):
    config, params, rep = args
    return _replication(config, params, rep)[0]


def simulate(config: NetworkConfig, params: SimParams, jobs: int = 1) -> SimReport:
    """Run all replications; results do not depend on ``jobs``."""
    tasks = [(config, params, r) for r in range(params.replications)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            reps = list(ex.map(_run_rep, tasks))
    else:
        reps = [_run_rep(t) for t in tasks]
    return SimReport(
        zones=config.zones,
        params=params,
        values={m: np.stack([r[m] for r in reps]) for m in METRICS},
        exits=np.stack([r["exits"] for r in reps]),
        passenger_backlog=np.stack([r["passenger_backlog"] for r in reps]),
        vehicle_backlog=np.stack([r["vehicle_backlog"] for r in reps]),
        vehicles_in=np.array([r["vehicles_in"] for r in reps]),
        in_system=np.array([r["in_system"] for r in reps]),
    )


def simulate_raw_trips(config: NetworkConfig, params: SimParams, rep: int = 0) -> list[RawTrip]:
    """Road traversals and new-vehicle events of one replication after warmup."""
    return _replication(config, params, rep, record=True)[1]


# ---------------------------------------------------------------------------
# comparison against the analytic model


@dataclass(frozen=True)
class Discrepancy:
    zone: str
    queue: str
    metric: str
    analytic: float
    simulated: float
    se: float
    rel_error: float
    flag: str  # "ok", "exceeds" or "no analytic value"


def compare_to_analytic(config: NetworkConfig, flows: FlowSolution, sim: SimReport,
                        metrics=("rho", "l", "lq", "w", "wq"), tol: float = REL_TOL) -> list[Discrepancy]:
    """Relative error of every simulated queue metric against its closed form.

    Metrics whose analytic value is zero (an idle queue's L_q, say) are
    compared on absolute error instead.
    """
    rep = check_stability(config, flows)
    out = []
    for i, (z, p, zs) in enumerate(zip(config.zones, config.params, rep.zones)):
        analytic = {}
        for k, q in enumerate(QUEUES):
            try:
                if k < 2:
                    lam = float(flows.lambda_pv(q)[i])
                    mu = p.mu_ats if k == 0 else p.mu_tts
                    analytic[q] = mm1_metrics(Mm1Spec(lam, mu)) if mu > 0 else None
                else:
                    analytic[q] = mmc_metrics(MmcSpec(float(flows.lambda_road[i]), p.mu_road, p.c_road))
            except (NotStable, ValueError):
                analytic[q] = None
        for k, q in enumerate(QUEUES):
            for m in metrics:
                simv = float(sim.mean(m)[i, k])
                se = float(sim.se(m)[i, k])
                if analytic[q] is None:
                    out.append(Discrepancy(z, q, m, math.nan, simv, se, math.nan, "no analytic value"))
                    continue
                a = float(getattr(analytic[q], m))
                err = abs(simv - a) / abs(a) if a != 0 else abs(simv - a)
                flag = "ok" if err <= tol else "exceeds"
                out.append(Discrepancy(z, q, m, a, simv, se, err, flag))
    return out


# ---------------------------------------------------------------------------
# vectorised isolated matching queue


@dataclass(frozen=True)
class MatchingSimResult:
    mean_sojourn: np.ndarray  # per replication
    mean_wait: np.ndarray
    throughput: np.ndarray  # pairs served per minute after warmup

    @property
    def w(self) -> float:
        return float(self.mean_sojourn.mean())


def _arrival_times(rng, lam, horizon):
    # draw in chunks until the horizon is passed
    est = int(lam * horizon + 10 * math.sqrt(lam * horizon + 1) + 10)
    t = np.cumsum(rng.standard_exponential(est) / lam)
    while t[-1] <= horizon:
        more = np.cumsum(rng.standard_exponential(est // 4 + 10) / lam) + t[-1]
        t = np.concatenate([t, more])
    return t[t <= horizon]


def simulate_matching_queue(lambda_p: float, lambda_v: float, mu: float, horizon: float,
                            warmup: float | None = None, seed: int = 0,
                            replications: int = 1) -> MatchingSimResult:
    """Isolated synchronised queue: the k-th passenger pairs with the k-th vehicle.

    Departures follow the FCFS recursion d_k = max(d_{k-1}, a_k) + s_k, solved
    in one pass with a running maximum.
    """
    if warmup is None:
        warmup = 0.1 * horizon
    soj, wait, thr = [], [], []
    for r in range(replications):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=(r,))))
        tp = _arrival_times(rng, lambda_p, horizon)
        tv = _arrival_times(rng, lambda_v, horizon)
        m = min(len(tp), len(tv))
        a = np.maximum(tp[:m], tv[:m])
        s = rng.standard_exponential(m) / mu
        cs = np.cumsum(s)
        d = cs + np.maximum.accumulate(a - (cs - s))
        start = d - s
        keep = (a >= warmup) & (d <= horizon)
        soj.append(float(np.mean(d[keep] - a[keep])))
        wait.append(float(np.mean(start[keep] - a[keep])))
        thr.append(float(np.sum((d > warmup) & (d <= horizon)) / (horizon - warmup)))
    return MatchingSimResult(np.array(soj), np.array(wait), np.array(thr))


def sample_pair_counts(lambda_p: float, lambda_v: float, t: float, n_samples: int, seed: int = 0,
                       batch: int = 500) -> np.ndarray:
    """Samples of S_t = min(N_p(t), N_v(t)), the number of pairs formed by time t."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=(1,))))
    out = np.empty(n_samples, dtype=np.int64)
    for lo in range(0, n_samples, batch):
        k = min(batch, n_samples - lo)
        # counts by time t from exponential gaps, not from a Poisson draw
        np_ = _counts_by(rng, lambda_p, t, k)
        nv_ = _counts_by(rng, lambda_v, t, k)
        out[lo:lo + k] = np.minimum(np_, nv_)
    return out


def _counts_by(rng, lam, t, k):
    if lam == 0:
        return np.zeros(k, dtype=np.int64)
    m = int(lam * t + 8 * math.sqrt(lam * t) + 20)
    gaps = rng.standard_exponential((k, m)) / lam
    arr = np.cumsum(gaps, axis=1)
    assert np.all(arr[:, -1] > t)
    return np.sum(arr <= t, axis=1)


def generate_trips(config: NetworkConfig, params: SimParams, rep: int = 0, epoch: float = 0.0,
                   speed: float = 0.25):
    """Trip records (seconds since ``epoch``) of one simulated replication after warmup.

    Distance is travel minutes times ``speed``; occupied trips get a metered
    fare, cruises and new vehicles a fare of 0.
    """
    from .ingest import TripRecord

    out = []
    for r in simulate_raw_trips(config, params, rep):
        dist = r.travel * speed
        fare = 2.5 + 1.75 * dist + 0.35 * r.travel if r.event == "" else 0.0
        out.append(TripRecord(
            service=r.service.upper(),
            origin_zone=config.zones[r.origin],
            dest_zone=config.zones[r.dest] if r.dest >= 0 else "",
            pickup_time=epoch + 60.0 * r.start,
            travel_time=60.0 * r.travel,
            distance=dist,
            fare=fare,
            search_time=None if r.search is None else 60.0 * r.search,
            vehicle_event=r.event,
            vehicle_id=f"v{r.vehicle}",
        ))
    return out
