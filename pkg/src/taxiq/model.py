"""Network data model: zones, per-zone parameters, routing, validation and config I/O.

All rates are per minute. Each routing matrix has one row per zone and one
column per zone plus a final exit column.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, SchemaError

SCHEMA_VERSION = 1

ROUTING_CLASSES = ("occ_ats", "emp_ats", "occ_tts", "emp_tts")
ROUTING_KEYS = tuple(f"p_{c}" for c in ROUTING_CLASSES)
PORTION_KEYS = tuple(f"portion_{c}" for c in ROUTING_CLASSES)

ROW_TOL = 1e-9


@dataclass(frozen=True)
class ZoneParams:
    lambda_p: float
    p_ats: float
    lambda_v_ats: float
    lambda_v_tts: float
    p_pick_ats: float
    p_pick_tts: float
    mu_ats: float
    mu_tts: float
    mu_road: float
    c_road: int
    portion_occ_ats: float = 0.25
    portion_emp_ats: float = 0.25
    portion_occ_tts: float = 0.25
    portion_emp_tts: float = 0.25

    @property
    def p_tts(self) -> float:
        return 1.0 - self.p_ats

    @property
    def p_pass(self) -> float:
        """Probability that a through-flowing vehicle does not pick up here."""
        return 1.0 - self.p_pick_ats - self.p_pick_tts

    def portions(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PORTION_KEYS])


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RoutingMatrices:
    p_occ_ats: np.ndarray
    p_emp_ats: np.ndarray
    p_occ_tts: np.ndarray
    p_emp_tts: np.ndarray

    def __post_init__(self):
        for k in ROUTING_KEYS:
            object.__setattr__(self, k, _frozen(getattr(self, k)))

    def stack(self) -> np.ndarray:
        """Shape (4, n, n+1) in ROUTING_CLASSES order."""
        return np.stack([getattr(self, k) for k in ROUTING_KEYS])

    @classmethod
    def uniform(cls, matrix) -> "RoutingMatrices":
        """Same matrix for all four vehicle classes."""
        return cls(*(matrix for _ in ROUTING_KEYS))

    def __eq__(self, other):
        if not isinstance(other, RoutingMatrices):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ROUTING_KEYS
        )


@dataclass(frozen=True, eq=False)
class NetworkConfig:
    zones: tuple[str, ...]
    adjacency: np.ndarray
    params: tuple[ZoneParams, ...]
    routing: RoutingMatrices
    allow_self_loops: bool = False

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "adjacency", _frozen(self.adjacency, bool))

    @property
    def n(self) -> int:
        return len(self.zones)

    def index(self, zone: str) -> int:
        return self.zones.index(zone)

    def vec(self, name: str) -> np.ndarray:
        """Per-zone vector of one ZoneParams field (or derived property)."""
        return np.array([getattr(p, name) for p in self.params], dtype=float)

    def __eq__(self, other):
        if not isinstance(other, NetworkConfig):
            return NotImplemented
        return (
            self.zones == other.zones
            and np.array_equal(self.adjacency, other.adjacency)
            and self.params == other.params
            and self.routing == other.routing
            and self.allow_self_loops == other.allow_self_loops
        )

    def replace(self, **changes) -> "NetworkConfig":
        return dataclasses.replace(self, **changes)

    def with_params(self, **per_zone) -> "NetworkConfig":
        """Copy with ZoneParams fields overridden; values may be scalars or per-zone sequences."""
        params = []
        for i, p in enumerate(self.params):
            kw = {}
            for k, v in per_zone.items():
                kw[k] = v[i] if isinstance(v, (list, tuple, np.ndarray)) else v
            params.append(dataclasses.replace(p, **kw))
        return self.replace(params=tuple(params))


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Finding:
    locus: str
    rule: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[Finding, ...] = ()
    warnings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self):
        return self.ok


def validate_network(config: NetworkConfig) -> ValidationReport:
    """Check every structural and probabilistic invariant of ``config``.

    Violations are returned, never raised. Findings are ordered by check:
    zones, adjacency, routing (per class, per row), then zone parameters.
    """
    errors: list[Finding] = []
    warnings: list[Finding] = []
    n = config.n

    if n == 0:
        errors.append(Finding("zones", "non-empty", "network has no zones"))
    seen = set()
    for z in config.zones:
        if not isinstance(z, str) or not z:
            errors.append(Finding("zones", "zone-id", f"invalid zone id {z!r}"))
        elif z in seen:
            errors.append(Finding(f"zones.{z}", "unique", f"duplicate zone id {z!r}"))
        seen.add(z)

    adj = config.adjacency
    adj_ok = adj.shape == (n, n)
    if not adj_ok:
        errors.append(
            Finding("adjacency", "shape", f"expected {n}x{n}, got {'x'.join(map(str, adj.shape))}")
        )
    elif not config.allow_self_loops:
        for i in range(n):
            if adj[i, i]:
                errors.append(
                    Finding(
                        f"adjacency[{config.zones[i]}]",
                        "zero-diagonal",
                        "self-loop present but allow_self_loops is false",
                    )
                )

    for key in ROUTING_KEYS:
        m = getattr(config.routing, key)
        if m.shape != (n, n + 1):
            errors.append(
                Finding(f"routing.{key}", "shape", f"expected {n}x{n + 1}, got {'x'.join(map(str, m.shape))}")
            )
            continue
        for i in range(n):
            row = m[i]
            locus = f"routing.{key}[{config.zones[i]}]"
            if not np.all(np.isfinite(row)):
                errors.append(Finding(locus, "finite", "row contains non-finite entries"))
                continue
            if np.any(row < 0) or np.any(row > 1):
                errors.append(Finding(locus, "probability-range", "entries must lie in [0, 1]"))
            s = float(row.sum())
            if abs(s - 1.0) > ROW_TOL:
                errors.append(Finding(locus, "row-stochastic", f"row sums to {s:.12g}, expected 1"))
            if adj_ok:
                bad = [config.zones[j] for j in range(n) if row[j] != 0 and not adj[i, j]]
                if bad:
                    errors.append(
                        Finding(locus, "adjacency-support", f"nonzero routing to non-adjacent zones {bad}")
                    )

    if len(config.params) != n:
        errors.append(Finding("params", "count", f"expected {n} zone entries, got {len(config.params)}"))
    for z, p in zip(config.zones, config.params):
        errors.extend(_check_params(z, p))

    return ValidationReport(tuple(errors), tuple(warnings))


_RATE_FIELDS = ("lambda_p", "lambda_v_ats", "lambda_v_tts", "mu_ats", "mu_tts", "mu_road")
_PROB_FIELDS = ("p_ats", "p_pick_ats", "p_pick_tts")


def _check_params(zone: str, p: ZoneParams) -> Iterable[Finding]:
    loc = f"params.{zone}"
    for f in _RATE_FIELDS:
        v = getattr(p, f)
        if not math.isfinite(v) or v < 0:
            yield Finding(f"{loc}.{f}", "non-negative-rate", f"{f}={v!r} must be a finite rate >= 0")
    if not isinstance(p.c_road, (int, np.integer)) or p.c_road < 1:
        yield Finding(f"{loc}.c_road", "server-count", f"c_road={p.c_road!r} must be an integer >= 1")
    for f in _PROB_FIELDS:
        v = getattr(p, f)
        if not (0.0 <= v <= 1.0):
            yield Finding(f"{loc}.{f}", "probability-range", f"{f}={v!r} must lie in [0, 1]")
    if p.p_pick_ats + p.p_pick_tts > 1.0 + ROW_TOL:
        yield Finding(
            f"{loc}.p_pick",
            "pickup-sum",
            f"pickup probabilities exceed 1 ({p.p_pick_ats} + {p.p_pick_tts})",
        )
    por = p.portions()
    if np.any(por < 0) or not np.all(np.isfinite(por)):
        yield Finding(f"{loc}.portions", "non-negative", "flow portions must be >= 0")
    if abs(por.sum() - 1.0) > ROW_TOL:
        yield Finding(f"{loc}.portions", "sum-to-one", f"flow portions sum to {por.sum():.12g}, expected 1")


# ---------------------------------------------------------------------------
# serialization

_ZONE_FIELDS = [f.name for f in dataclasses.fields(ZoneParams)]


def config_to_dict(config: NetworkConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "zones": list(config.zones),
        "allow_self_loops": bool(config.allow_self_loops),
        "adjacency": [[bool(x) for x in row] for row in config.adjacency],
        "params": {
            z: {k: (int(v) if k == "c_road" else float(v)) for k, v in dataclasses.asdict(p).items()}
            for z, p in zip(config.zones, config.params)
        },
        "routing": {k: getattr(config.routing, k).tolist() for k in ROUTING_KEYS},
    }


def _number(value, locus):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {type(value).__name__}", locus)
    return float(value)


def _matrix(value, locus):
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        raise ConfigError("expected an array of arrays", locus)
    return [[_number(x, f"{locus}[{i}][{j}]") for j, x in enumerate(r)] for i, r in enumerate(value)]


def config_from_dict(d: dict) -> NetworkConfig:
    if not isinstance(d, dict):
        raise SchemaError("top level must be an object")
    if "schema_version" not in d:
        raise SchemaError("missing key", "schema_version")
    if d["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {d['schema_version']!r}, expected {SCHEMA_VERSION}", "schema_version")
    for key in ("zones", "adjacency", "params", "routing"):
        if key not in d:
            raise SchemaError("missing key", key)

    zones = d["zones"]
    if not isinstance(zones, list) or not all(isinstance(z, str) for z in zones):
        raise ConfigError("expected an array of strings", "zones")

    adj_raw = d["adjacency"]
    if not isinstance(adj_raw, list) or not all(isinstance(r, list) for r in adj_raw):
        raise ConfigError("expected an array of arrays", "adjacency")
    adjacency = []
    for i, row in enumerate(adj_raw):
        out = []
        for j, x in enumerate(row):
            if isinstance(x, bool) or x in (0, 1):
                out.append(bool(x))
            else:
                raise ConfigError(f"expected boolean, got {x!r}", f"adjacency[{i}][{j}]")
        adjacency.append(out)
    if len(adjacency) == 0:
        adjacency = np.zeros((0, 0), dtype=bool)

    params_raw = d["params"]
    if not isinstance(params_raw, dict):
        raise ConfigError("expected an object keyed by zone id", "params")
    params = []
    for z in zones:
        if z not in params_raw:
            raise SchemaError("missing zone parameters", f"params.{z}")
        raw = params_raw[z]
        if not isinstance(raw, dict):
            raise ConfigError("expected an object", f"params.{z}")
        unknown = set(raw) - set(_ZONE_FIELDS)
        if unknown:
            raise SchemaError(f"unknown fields {sorted(unknown)}", f"params.{z}")
        kw = {}
        for k in _ZONE_FIELDS:
            if k not in raw:
                if k.startswith("portion_"):
                    continue
                raise SchemaError("missing field", f"params.{z}.{k}")
            if k == "c_road":
                v = raw[k]
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ConfigError(f"expected an integer, got {v!r}", f"params.{z}.c_road")
                kw[k] = v
            else:
                kw[k] = _number(raw[k], f"params.{z}.{k}")
        params.append(ZoneParams(**kw))

    routing_raw = d["routing"]
    if not isinstance(routing_raw, dict):
        raise ConfigError("expected an object", "routing")
    mats = {}
    for k in ROUTING_KEYS:
        if k not in routing_raw:
            raise SchemaError("missing routing matrix", f"routing.{k}")
        m = _matrix(routing_raw[k], f"routing.{k}")
        if len({len(r) for r in m}) > 1:
            raise ConfigError("ragged matrix", f"routing.{k}")
        mats[k] = np.array(m, dtype=float).reshape(len(m), -1 if m else len(zones) + 1)

    allow = d.get("allow_self_loops", False)
    if not isinstance(allow, bool):
        raise ConfigError("expected boolean", "allow_self_loops")
    return NetworkConfig(
        zones=tuple(zones),
        adjacency=np.array(adjacency, dtype=bool),
        params=tuple(params),
        routing=RoutingMatrices(**mats),
        allow_self_loops=allow,
    )


def dumps_config(config: NetworkConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2) + "\n"


def save_config(config: NetworkConfig, path) -> None:
    Path(path).write_text(dumps_config(config))


def load_config(path) -> NetworkConfig:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", f"line {e.lineno} column {e.colno}") from e
    return config_from_dict(d)


def config_hash(config: NetworkConfig) -> str:
    """sha256 over the canonical JSON encoding; stable across platforms."""
    blob = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
