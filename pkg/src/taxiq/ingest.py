"""Trip-record ingestion, binning into count series, and parameter estimation.

Files carry times in seconds; everything returned by the estimators is in
minutes. A record is one of

* an occupied trip (``vehicle_event`` empty): a pickup at ``pickup_time`` in
  ``origin_zone`` with the vehicle's preceding matching time in ``search_time``;
* an empty road traversal (``vehicle_event == "cruise"``), ``service`` being
  the vehicle's label;
* a new vehicle coming online (``vehicle_event == "new_online"``), for which
  travel_time is 0.

An empty ``dest_zone`` on a trip or cruise record means the vehicle left the
study area afterwards.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .arrivals import CountSeries
from .errors import EmptyWindow, HeaderMismatch
from .model import NetworkConfig, RoutingMatrices, ZoneParams

SERVICES = ("ATS", "TTS")
EVENTS = ("", "new_online", "cruise")
REQUIRED = ("service", "origin_zone", "dest_zone", "pickup_time", "travel_time", "distance", "fare")
OPTIONAL = ("search_time", "vehicle_event", "vehicle_id")
FULL_HEADER = REQUIRED + OPTIONAL
MIN_SLICES = 30
MIN_TRANSITIONS = 30
MIN_SEARCH = 30


@dataclass(frozen=True)
class TripRecord:
    service: str
    origin_zone: str
    dest_zone: str
    pickup_time: float
    travel_time: float
    distance: float
    fare: float
    search_time: float | None = None
    vehicle_event: str = ""
    vehicle_id: str = ""

    def __post_init__(self):
        if self.service not in SERVICES:
            raise ValueError(f"service must be ATS or TTS, got {self.service!r}")
        if self.vehicle_event not in EVENTS:
            raise ValueError(f"unknown vehicle_event {self.vehicle_event!r}")
        if not self.origin_zone:
            raise ValueError("origin_zone is empty")
        for name in ("pickup_time", "travel_time", "distance", "fare"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")
        if self.vehicle_event == "new_online":
            if self.travel_time < 0:
                raise ValueError("travel_time must be >= 0")
        elif not self.travel_time > 0:
            raise ValueError("travel_time must be > 0")
        if self.distance < 0 or self.fare < 0:
            raise ValueError("distance and fare must be >= 0")
        if self.search_time is not None and not (self.search_time >= 0 and math.isfinite(self.search_time)):
            raise ValueError("search_time must be >= 0")

    @property
    def is_trip(self) -> bool:
        return self.vehicle_event == ""

    @property
    def end_time(self) -> float:
        return self.pickup_time + self.travel_time


@dataclass(frozen=True)
class RowError:
    row: int
    message: str
    raw: str


@dataclass
class ParseResult:
    records: list[TripRecord]
    errors: list[RowError]


def _opt_float(v: str):
    v = v.strip()
    return None if v == "" else float(v)


def parse_trips(stream, zone_map: dict | None = None) -> ParseResult:
    """Read a trip CSV; malformed rows go to ``errors`` with their line number.

    The header must start with the seven required columns, optionally followed
    by search_time, vehicle_event and vehicle_id in that order.
    """
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise HeaderMismatch("empty trip file") from None
    if len(header) < len(REQUIRED) or tuple(header) != FULL_HEADER[: len(header)]:
        raise HeaderMismatch(f"unexpected trip header {','.join(header)}")
    records, errors = [], []
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        raw = ",".join(row)
        if len(row) != len(header):
            errors.append(RowError(line, f"expected {len(header)} fields, got {len(row)}", raw))
            continue
        d = dict(zip(header, row))
        try:
            origin, dest = d["origin_zone"].strip(), d["dest_zone"].strip()
            if zone_map is not None:
                if origin not in zone_map:
                    raise ValueError(f"unmapped location {origin!r}")
                origin = zone_map[origin]
                if dest:
                    if dest not in zone_map:
                        raise ValueError(f"unmapped location {dest!r}")
                    dest = zone_map[dest]
            rec = TripRecord(
                service=d["service"].strip().upper(),
                origin_zone=origin,
                dest_zone=dest,
                pickup_time=float(d["pickup_time"]),
                travel_time=float(d["travel_time"]),
                distance=float(d["distance"]),
                fare=float(d["fare"]),
                search_time=_opt_float(d.get("search_time", "")),
                vehicle_event=d.get("vehicle_event", "").strip(),
                vehicle_id=d.get("vehicle_id", "").strip(),
            )
        except ValueError as exc:
            errors.append(RowError(line, str(exc), raw))
            continue
        records.append(rec)
    return ParseResult(records, errors)


def read_trips(path, zone_map: dict | None = None) -> ParseResult:
    with open(path, newline="") as fh:
        return parse_trips(fh, zone_map)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_trips(stream, records) -> None:
    """Write records with a full header; floats use their shortest exact repr."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(FULL_HEADER)
    for r in records:
        w.writerow([r.service, r.origin_zone, r.dest_zone, _fmt(r.pickup_time), _fmt(r.travel_time),
                    _fmt(r.distance), _fmt(r.fare), _fmt(r.search_time), r.vehicle_event, r.vehicle_id])


def dumps_trips(records) -> str:
    buf = io.StringIO()
    write_trips(buf, records)
    return buf.getvalue()


def write_errors(stream, errors) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["row", "message", "raw"])
    for e in errors:
        w.writerow([e.row, e.message, e.raw])


def read_zone_map(path) -> dict[str, str]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["raw_location_id", "zone"]:
            raise HeaderMismatch("zone map header must be 'raw_location_id,zone'")
        return {r["raw_location_id"].strip(): r["zone"].strip() for r in reader}


# ---------------------------------------------------------------------------
# time windows and binning


@dataclass(frozen=True)
class TimeWindow:
    """Absolute span [start, end) in epoch seconds, optionally restricted to
    weekdays (0 = Monday) and a daily minute-of-day range [day_start, day_end)."""

    start: float
    end: float
    weekdays: tuple[int, ...] | None = None
    day_start: int = 0
    day_end: int = 1440

    def __post_init__(self):
        if not self.end >= self.start:
            raise ValueError("window end before start")
        if not 0 <= self.day_start <= self.day_end <= 1440:
            raise ValueError("need 0 <= day_start <= day_end <= 1440")

    @classmethod
    def covering(cls, records) -> "TimeWindow":
        """Whole minutes spanning every pickup."""
        t = [r.pickup_time for r in records]
        if not t:
            raise EmptyWindow("no records")
        lo = math.floor(min(t) / 60.0) * 60.0
        hi = (math.floor(max(t) / 60.0) + 1) * 60.0
        return cls(lo, hi)

    def segments(self) -> list[tuple[float, float]]:
        if self.weekdays is None and (self.day_start, self.day_end) == (0, 1440):
            return [(self.start, self.end)] if self.end > self.start else []
        out = []
        day = datetime.fromtimestamp(self.start, tz=timezone.utc).replace(hour=0, minute=0, second=0, microsecond=0)
        while day.timestamp() < self.end:
            if self.weekdays is None or day.weekday() in self.weekdays:
                a = max(day.timestamp() + 60 * self.day_start, self.start)
                b = min(day.timestamp() + 60 * self.day_end, self.end)
                if b > a:
                    out.append((a, b))
            day += timedelta(days=1)
        return out

    def minutes(self) -> float:
        return sum(b - a for a, b in self.segments()) / 60.0

    def contains(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.segments())


def _label_filter(label: str, service: str | None):
    if label == "passenger":
        return lambda r: r.is_trip and (service is None or r.service == service)
    if label in ("vehicle_ats", "vehicle_tts"):
        svc = label[-3:].upper()
        return lambda r: r.vehicle_event == "new_online" and r.service == svc
    if label == "pooled":
        return lambda r: r.vehicle_event == "new_online"
    raise ValueError(f"unknown label {label!r}")


def bin_counts(records, zones, label: str, interval_minutes: float, window: TimeWindow,
               service: str | None = None) -> CountSeries:
    """Counts of matching events per consecutive bin across the window's segments.

    ``passenger`` counts pickups (optionally one service), ``vehicle_ats`` and
    ``vehicle_tts`` count new vehicles of that service and ``pooled`` counts
    new vehicles of both. ``zones`` may be None for every zone.
    """
    segs = window.segments()
    if not segs:
        raise EmptyWindow("window covers no time")
    width = 60.0 * interval_minutes
    for a, b in segs:
        k = (b - a) / width
        if abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ValueError(f"interval {interval_minutes} min does not divide a {(b - a) / 60:g} min segment")
    keep = _label_filter(label, service)
    zset = None if zones is None else {zones} if isinstance(zones, str) else set(zones)
    times = np.array([r.pickup_time for r in records
                      if keep(r) and (zset is None or r.origin_zone in zset)], dtype=float)
    parts = []
    for a, b in segs:
        nb = int(round((b - a) / width))
        inside = times[(times >= a) & (times < b)]
        idx = np.minimum(((inside - a) // width).astype(int), nb - 1)
        parts.append(np.bincount(idx, minlength=nb))
    zone = "" if zset is None else ",".join(sorted(zset))
    return CountSeries(np.concatenate(parts), interval_minutes, zone, label)


# ---------------------------------------------------------------------------
# estimation


@dataclass(frozen=True)
class SliceStat:
    mean: float
    variance: float
    n_slices: int


@dataclass(frozen=True)
class ZoneEstimate:
    zone: str
    params: ZoneParams
    slices: dict  # probability name -> SliceStat across one-minute slices
    flags: tuple[str, ...] = ()

    @property
    def low_data(self) -> bool:
        return "low-data" in self.flags


@dataclass
class EstimationReport:
    zones: list[ZoneEstimate]
    routing_flags: dict = field(default_factory=dict)
    window_minutes: float = 0.0

    def flags(self):
        for z in self.zones:
            for f in z.flags:
                yield z.zone, f
        for (z, cls), f in sorted(self.routing_flags.items()):
            yield z, f"{cls}:{f}"


def _in_window(records, window):
    if window is None:
        return list(records)
    return [r for r in records if window.contains(r.pickup_time)]


def _pickup_outcomes(records):
    """(zone, arrival time, outcome) per road arrival, outcome in {ATS, TTS, pass}.

    Needs vehicle ids: the vehicle's next record decides the outcome. Arrivals
    with no later record are censored and skipped.
    """
    by_vehicle = defaultdict(list)
    for r in records:
        if r.vehicle_id:
            by_vehicle[r.vehicle_id].append(r)
    out = []
    for recs in by_vehicle.values():
        recs.sort(key=lambda r: (r.pickup_time, r.vehicle_event != "new_online"))
        for a, b in zip(recs, recs[1:]):
            if a.vehicle_event == "new_online" or not a.dest_zone:
                continue
            if b.origin_zone != a.dest_zone or b.vehicle_event == "new_online":
                continue
            outcome = b.service if b.is_trip else "pass"
            out.append((a.dest_zone, a.end_time, outcome))
    return out


def _slice_stat(num_times, den_times, t0):
    """Mean and variance across one-minute slices of the share num/den."""
    if len(den_times) == 0:
        return SliceStat(math.nan, math.nan, 0)
    den = Counter(int((t - t0) // 60) for t in den_times)
    num = Counter(int((t - t0) // 60) for t in num_times)
    shares = np.array([num.get(k, 0) / v for k, v in den.items()])
    return SliceStat(float(shares.mean()), float(shares.var()), len(shares))


def estimate_probabilities(records, window: TimeWindow | None = None, zones=None) -> dict[str, dict]:
    """Per zone: slice statistics of p_ats and the pickup probabilities plus pooled point estimates.

    Returns zone -> {"slices": {name: SliceStat}, "point": {name: value}, "flags": [...]}.
    """
    recs = _in_window(records, window)
    t0 = window.start if window is not None else min((r.pickup_time for r in recs), default=0.0)
    zones = sorted({r.origin_zone for r in recs}) if zones is None else list(zones)
    trips = defaultdict(list)
    for r in recs:
        if r.is_trip:
            trips[r.origin_zone].append(r)
    has_ids = any(r.vehicle_id for r in recs)
    outcomes = defaultdict(list)
    for z, t, o in _pickup_outcomes(recs):
        outcomes[z].append((t, o))

    result = {}
    for z in zones:
        flags = []
        tz = trips.get(z, [])
        all_t = [r.pickup_time for r in tz]
        ats_t = [r.pickup_time for r in tz if r.service == "ATS"]
        slices = {"p_ats": _slice_stat(ats_t, all_t, t0)}
        point = {"p_ats": len(ats_t) / len(all_t) if all_t else math.nan}
        oc = outcomes.get(z, [])
        arr_t = [t for t, _ in oc]
        for svc in SERVICES:
            name = f"p_pick_{svc.lower()}"
            hit = [t for t, o in oc if o == svc]
            slices[name] = _slice_stat(hit, arr_t, t0)
            point[name] = len(hit) / len(oc) if oc else math.nan
        if not has_ids:
            flags.append("no-vehicle-id")
        if slices["p_ats"].n_slices < MIN_SLICES:
            flags.append("low-data")
        result[z] = {"slices": slices, "point": point, "flags": flags}
    return result


CLASS_OF = {("ATS", True): "occ_ats", ("ATS", False): "emp_ats", ("TTS", True): "occ_tts", ("TTS", False): "emp_tts"}


def estimate_routing(records, zones, adjacency=None, min_transitions: int = MIN_TRANSITIONS):
    """Class routing matrices from observed road departures.

    Occupied trips give the occupied rows, cruise records the empty rows and an
    empty dest_zone counts toward the exit column. When no cruise records exist
    the empty rows copy the occupied ones. A (zone, class) with fewer than
    ``min_transitions`` departures falls back to uniform over its neighbours.
    Returns (RoutingMatrices, adjacency, flags) with flags keyed by (zone, class).
    """
    zones = list(zones)
    n = len(zones)
    idx = {z: k for k, z in enumerate(zones)}
    counts = {c: np.zeros((n, n + 1)) for c in CLASS_OF.values()}
    for r in records:
        if r.vehicle_event == "new_online" or r.origin_zone not in idx:
            continue
        cls = CLASS_OF[(r.service, r.is_trip)]
        j = idx.get(r.dest_zone, n) if r.dest_zone else n
        if r.dest_zone and r.dest_zone not in idx:
            continue
        counts[cls][idx[r.origin_zone], j] += 1
    if adjacency is None:
        tot = sum(counts.values())[:, :n]
        adjacency = tot > 0
    adjacency = np.asarray(adjacency, dtype=bool)

    flags = {}
    have_empty = counts["emp_ats"].sum() + counts["emp_tts"].sum() > 0
    mats = {}
    for cls, m in counts.items():
        src = m
        if not have_empty and cls.startswith("emp"):
            src = counts["occ" + cls[3:]]
        out = np.zeros((n, n + 1))
        for i in range(n):
            row = src[i].copy()
            row[:n] = np.where(adjacency[i], row[:n], 0.0)
            if row.sum() < min_transitions:
                nb = np.flatnonzero(adjacency[i])
                if nb.size:
                    out[i, nb] = 1.0 / nb.size
                else:
                    out[i, n] = 1.0
                flags[(zones[i], cls)] = "uniform-fallback"
            else:
                out[i] = row / row.sum()
                if src is not m:
                    flags[(zones[i], cls)] = "copied-from-occupied"
        mats[cls] = out
    routing = RoutingMatrices(p_occ_ats=mats["occ_ats"], p_emp_ats=mats["emp_ats"],
                              p_occ_tts=mats["occ_tts"], p_emp_tts=mats["emp_tts"])
    return routing, adjacency, flags


def estimate_service_rates(records, pair_rates: dict, min_samples: int = MIN_SEARCH) -> dict:
    """mu = lambda_pv + 1 / mean search time per (zone, service).

    ``pair_rates`` maps (zone, service) to the matched-pair rate per minute.
    Returns (zone, service) -> (mu or nan, flag or "").
    """
    st = defaultdict(list)
    for r in records:
        if r.is_trip and r.search_time is not None:
            st[(r.origin_zone, r.service)].append(r.search_time / 60.0)
    out = {}
    for key, lam in pair_rates.items():
        xs = st.get(key, [])
        if len(xs) < min_samples:
            out[key] = (math.nan, "no-search-time" if not xs else "low-data")
            continue
        t_hat = float(np.mean(xs))
        out[key] = (lam + 1.0 / t_hat if t_hat > 0 else math.inf, "")
    return out


def estimate_network_config(records, window: TimeWindow | None = None, zones=None, adjacency=None,
                            c_road=None, base: NetworkConfig | None = None):
    """Every ZoneParams field, the routing matrices and the flow portions from trip records.

    Server counts cannot be read off trip records; they come from ``c_road``
    (an int or one per zone), else ``base``, else an MFD estimate done elsewhere.
    Rates not identifiable from the data (too few search times, say) also fall
    back to ``base`` when it is given, and are flagged.
    """
    recs = _in_window(records, window)
    if window is None:
        window = TimeWindow.covering(recs)
    minutes = window.minutes()
    if minutes <= 0:
        raise EmptyWindow("window covers no time")
    if zones is None:
        zones = base.zones if base is not None else tuple(sorted({r.origin_zone for r in recs}))
    zones = tuple(zones)
    n = len(zones)
    if adjacency is None and base is not None:
        adjacency = base.adjacency
    if c_road is None:
        if base is None:
            raise ValueError("c_road must be given when no base config is supplied")
        c_road = [p.c_road for p in base.params]
    c_road = [int(c_road)] * n if np.isscalar(c_road) else [int(c) for c in c_road]

    probs = estimate_probabilities(recs, window, zones)
    routing, adjacency, rflags = estimate_routing(recs, zones, adjacency)

    pick = Counter((r.origin_zone, r.service) for r in recs if r.is_trip)
    online = Counter((r.origin_zone, r.service) for r in recs if r.vehicle_event == "new_online")
    travel = defaultdict(list)
    classes = defaultdict(Counter)
    for r in recs:
        if r.vehicle_event != "new_online":
            travel[r.origin_zone].append(r.travel_time / 60.0)
            classes[r.origin_zone][CLASS_OF[(r.service, r.is_trip)]] += 1
    pair_rates = {(z, s): pick[(z, s)] / minutes for z in zones for s in SERVICES}
    mus = estimate_service_rates(recs, pair_rates)

    estimates, params = [], []
    for k, z in enumerate(zones):
        pr = probs[z]
        flags = list(pr["flags"])
        fallback = base.params[k] if base is not None else None

        def pick_value(name, value, flag):
            if math.isfinite(value):
                return value
            flags.append(flag)
            if fallback is None:
                return 0.0
            return getattr(fallback, name)

        n_pick = pick[(z, "ATS")] + pick[(z, "TTS")]
        mu = {}
        for s in SERVICES:
            v, f = mus[(z, s)]
            if f:
                flags.append(f"mu_{s.lower()}:{f}")
            mu[s] = pick_value(f"mu_{s.lower()}", v, f"mu_{s.lower()}:fallback")
        mean_tt = float(np.mean(travel[z])) if travel[z] else math.nan
        tot_cls = sum(classes[z].values())
        por = {c: classes[z][c] / tot_cls if tot_cls else 0.25 for c in CLASS_OF.values()}
        zp = ZoneParams(
            lambda_p=n_pick / minutes,
            p_ats=pick_value("p_ats", pr["point"]["p_ats"], "p_ats:fallback"),
            lambda_v_ats=online[(z, "ATS")] / minutes,
            lambda_v_tts=online[(z, "TTS")] / minutes,
            p_pick_ats=pick_value("p_pick_ats", pr["point"]["p_pick_ats"], "p_pick:fallback"),
            p_pick_tts=pick_value("p_pick_tts", pr["point"]["p_pick_tts"], "p_pick:fallback"),
            mu_ats=mu["ATS"],
            mu_tts=mu["TTS"],
            mu_road=pick_value("mu_road", 1.0 / mean_tt if mean_tt > 0 else math.nan, "mu_road:fallback"),
            c_road=c_road[k],
            portion_occ_ats=por["occ_ats"], portion_emp_ats=por["emp_ats"],
            portion_occ_tts=por["occ_tts"], portion_emp_tts=por["emp_tts"],
        )
        params.append(zp)
        estimates.append(ZoneEstimate(z, zp, pr["slices"], tuple(dict.fromkeys(flags))))

    cfg = NetworkConfig(zones=zones, adjacency=adjacency, params=tuple(params), routing=routing,
                        allow_self_loops=bool(np.any(np.diag(adjacency))))
    return cfg, EstimationReport(estimates, rflags, minutes)
