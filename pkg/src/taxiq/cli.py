"""Command-line entry point: ``taxiq <subcommand> ...``.

Tabular results go to ``--out`` (CSV) or stdout. With ``--out`` a JSON
diagnostics sidecar and a run manifest are written next to it; without it the
manifest is printed to stderr as one JSON line.

Exit codes: 0 success, 1 data or validation findings, 2 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import arrivals, flow, ingest, metrics, sim, stationary
from .errors import (AllZero, ConfigError, EmptyWindow, HeaderMismatch, Infeasible, NonConvergence,
                     NotStable, StateSpaceTooLarge, TooFewSamples)
from .model import config_hash, dumps_config, load_config, validate_network

log = logging.getLogger("taxiq")


class UsageError(Exception):
    pass


class Findings(Exception):
    """Data or validation problem; maps to exit code 1."""


def _g(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return float(f"{x:.12g}") if math.isfinite(x) else str(x)
    return x


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_g(v) for v in r])
    return buf.getvalue()


class Run:
    """Collects outputs of one subcommand and writes them with the manifest."""

    def __init__(self, args):
        self.args = args
        self.t0 = time.perf_counter()
        self.hashes: dict[str, str] = {}
        self.seeds: dict[str, int] = {}
        self.diagnostics: dict = {}
        self.outputs: list[str] = []

    def hash_file(self, label, path):
        self.hashes[label] = hashlib.sha256(Path(path).read_bytes()).hexdigest()

    def load(self, path, check=True):
        try:
            cfg = load_config(path)
        except FileNotFoundError:
            raise UsageError(f"no such file: {path}") from None
        except ConfigError as e:
            raise Findings(f"invalid config {path}: {e}") from e
        self.hashes["config"] = config_hash(cfg)
        if check:
            rep = validate_network(cfg)
            if not rep.ok:
                for f in rep.errors:
                    print(f"error: {f.locus}: {f.rule}: {f.message}", file=sys.stderr)
                raise Findings(f"{path} failed validation")
        return cfg

    def _sidecar(self, suffix):
        out = Path(self.args.out)
        return out.with_name(out.stem + suffix)

    def emit(self, text: str, extra: dict | None = None):
        """Write the main output, diagnostics sidecar and manifest."""
        out = getattr(self.args, "out", None)
        if out:
            Path(out).write_text(text)
            self.outputs.append(str(out))
            diag = self._sidecar(".diagnostics.json")
            diag.write_text(json.dumps(_jsonable(self.diagnostics), indent=2, sort_keys=True) + "\n")
            self.outputs.append(str(diag))
            for name, body in (extra or {}).items():
                Path(name).write_text(body)
                self.outputs.append(str(name))
        else:
            sys.stdout.write(text)
        manifest = {
            "subcommand": self.args.command,
            "hashes": self.hashes,
            "seeds": self.seeds,
            "version": __version__,
            "outputs": self.outputs,
            "wall_clock_seconds": round(time.perf_counter() - self.t0, 6),
        }
        if out:
            self._sidecar(".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        else:
            print(json.dumps(manifest, sort_keys=True), file=sys.stderr)


def _flows(run, cfg, method="fixed-point"):
    try:
        return flow.solve(cfg, method)
    except (NonConvergence, Infeasible) as e:
        raise Findings(str(e)) from e


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args):
    run = Run(args)
    cfg = run.load(args.config, check=False)
    rep = validate_network(cfg)
    rows = [("error", f.locus, f.rule, f.message) for f in rep.errors]
    rows += [("warning", f.locus, f.rule, f.message) for f in rep.warnings]
    run.diagnostics = {"ok": rep.ok, "errors": len(rep.errors), "warnings": len(rep.warnings)}
    run.emit(_table(("severity", "locus", "rule", "message"), rows))
    return 0 if rep.ok else 1


def cmd_balance(args):
    run = Run(args)
    cfg = run.load(args.config)
    sol = _flows(run, cfg, args.method)
    cols = ("lambda_pv_ats", "lambda_pv_tts", "f_in", "f_out", "lambda_hat_v_ats", "lambda_hat_v_tts", "lambda_road")
    rows = [(r["zone"], *(r[c] for c in cols)) for r in sol.rows()]
    run.diagnostics = {"method": sol.method, "iterations": sol.iterations, "residual": sol.residual,
                       "total_exit_flow": flow.total_exit_flow(cfg, sol), **sol.diagnostics}
    run.emit(_table(("zone", *cols), rows))
    return 0


def cmd_metrics(args):
    run = Run(args)
    cfg = run.load(args.config)
    sol = _flows(run, cfg, args.method)
    try:
        nm = metrics.network_metrics(cfg, sol)
    except NotStable as e:
        raise Findings(str(e)) from e
    rows = []
    for i, zm in enumerate(nm.zones):
        lam = (sol.lambda_pv_ats[i], sol.lambda_pv_tts[i], sol.lambda_road[i])
        for k, q in enumerate(metrics.QUEUES):
            m = zm.queue(q)
            rows.append((zm.zone, q, lam[k], m.rho, m.l, m.lq, m.w, m.wq))
    rows.append(("network", "all", nm.gamma, None, nm.l_network, None, nm.w_network, None))
    run.diagnostics = {"l_network": nm.l_network, "gamma": nm.gamma, "w_network": nm.w_network,
                       "flow_method": sol.method}
    run.emit(_table(("zone", "queue", "arrival_rate", "rho", "l", "lq", "w", "wq"), rows))
    return 0


def cmd_stationary(args):
    run = Run(args)
    cfg = run.load(args.config)
    sol = _flows(run, cfg)
    try:
        if args.cap is not None:
            caps = args.cap
        else:
            caps = stationary.auto_caps(cfg, sol, args.tail)
        table = stationary.truncated_distribution(cfg, sol, caps)
    except (NotStable, StateSpaceTooLarge) as e:
        raise Findings(str(e)) from e
    header = ["state"] + [f"{z}:{c}" for z in cfg.zones for c in ("x_tts", "x_ats", "x_road")] + ["probability"]
    rows = [(k, *coords, p) for k, (coords, p) in enumerate(stationary.iter_rows(table))]
    print(f"tail mass {table.tail_mass:.3e}", file=sys.stderr)
    run.diagnostics = {"tail_mass": table.tail_mass, "caps": table.caps, "states": len(table.probs)}
    run.emit(_table(header, rows))
    return 0


def _sim_params(args, run):
    run.seeds["simulation"] = args.seed
    try:
        return sim.SimParams(horizon=args.horizon, warmup=args.warmup, seed=args.seed, replications=args.reps)
    except ValueError as e:
        raise UsageError(str(e)) from e


def cmd_simulate(args):
    run = Run(args)
    cfg = run.load(args.config)
    params = _sim_params(args, run)
    rep = sim.simulate(cfg, params, jobs=args.jobs)
    header = ["zone", "queue"] + [c for m in sim.METRICS for c in (m, f"{m}_se")]
    rows = [[r[h] for h in header] for r in rep.rows()]
    run.diagnostics = {
        "horizon": params.horizon, "warmup": params.warmup, "replications": params.replications,
        "exits": {z: dict(zip(sim.EXIT_CLASSES, rep.exits.sum(axis=0)[i].tolist())) for i, z in enumerate(cfg.zones)},
        "passenger_backlog": {z: rep.passenger_backlog.mean(axis=0)[i] for i, z in enumerate(cfg.zones)},
        "vehicle_backlog": {z: rep.vehicle_backlog.mean(axis=0)[i] for i, z in enumerate(cfg.zones)},
        "vehicles_in": rep.vehicles_in, "in_system": rep.in_system,
        "total_occupancy": rep.total_occupancy(),
    }
    run.emit(_table(header, rows))
    return 0


def cmd_compare(args):
    run = Run(args)
    cfg = run.load(args.config)
    sol = _flows(run, cfg)
    params = _sim_params(args, run)
    rep = sim.simulate(cfg, params, jobs=args.jobs)
    table = sim.compare_to_analytic(cfg, sol, rep, tol=args.tol)
    rows = [(d.zone, d.queue, d.metric, d.analytic, d.simulated, d.se, d.rel_error, d.flag) for d in table]
    flagged = [d for d in table if d.flag != "ok"]
    run.diagnostics = {"tolerance": args.tol, "flagged": len(flagged),
                       "stable": stationary.check_stability(cfg, sol).stable}
    run.emit(_table(("zone", "queue", "metric", "analytic", "simulated", "se", "rel_error", "flag"), rows))
    return 1 if flagged else 0


def cmd_test_arrivals(args):
    run = Run(args)
    try:
        series = arrivals.read_counts_csv(args.counts)
    except FileNotFoundError:
        raise UsageError(f"no such file: {args.counts}") from None
    except ValueError as e:
        raise Findings(f"invalid counts file: {e}") from e
    run.hash_file("counts", args.counts)
    run.seeds["split"] = args.split_seed
    methods = arrivals.METHODS if "all" in args.method else args.method
    rows, skipped = [], 0
    for s in series:
        for m in methods:
            try:
                r = arrivals.run_test(m, s, args.alpha, args.split_seed)
                rows.append((s.zone, s.label, s.interval_minutes, s.n, m, r.statistic, r.threshold,
                             r.p_value, r.reject, arrivals.estimate_rate(s), ""))
            except (TooFewSamples, AllZero) as e:
                skipped += 1
                rows.append((s.zone, s.label, s.interval_minutes, s.n, m, None, None, None, None,
                             arrivals.estimate_rate(s), str(e)))
    run.diagnostics = {"series": len(series), "alpha": args.alpha, "skipped": skipped}
    run.emit(_table(("zone", "label", "interval_minutes", "n", "method", "statistic", "threshold",
                     "p_value", "reject", "rate", "note"), rows))
    return 0


def _window(args, records):
    if args.start is None and args.end is None and args.weekdays is None and args.hours is None:
        return ingest.TimeWindow.covering(records)
    cover = ingest.TimeWindow.covering(records)
    start = cover.start if args.start is None else args.start
    end = cover.end if args.end is None else args.end
    days = None if args.weekdays is None else tuple(int(d) for d in args.weekdays.split(","))
    day_start, day_end = 0, 1440
    if args.hours is not None:
        a, b = args.hours.split("-")
        day_start, day_end = int(float(a) * 60), int(float(b) * 60)
    return ingest.TimeWindow(start, end, days, day_start, day_end)


def cmd_ingest(args):
    run = Run(args)
    zone_map = None
    try:
        if args.zone_map:
            zone_map = ingest.read_zone_map(args.zone_map)
            run.hash_file("zone_map", args.zone_map)
        parsed = ingest.read_trips(args.trips, zone_map)
    except FileNotFoundError as e:
        raise UsageError(f"no such file: {e.filename}") from None
    except HeaderMismatch as e:
        raise Findings(str(e)) from e
    run.hash_file("trips", args.trips)
    base = run.load(args.base) if args.base else None
    c_road = None if args.c_road is None else [int(c) for c in args.c_road.split(",")]
    if c_road is not None and len(c_road) == 1:
        c_road = c_road[0]
    if not parsed.records:
        raise Findings("no valid trip records")
    try:
        window = _window(args, parsed.records)
        cfg, rep = ingest.estimate_network_config(parsed.records, window, c_road=c_road, base=base)
    except (EmptyWindow, ValueError) as e:
        raise Findings(str(e)) from e
    extra = {}
    if args.out:
        err_path = Path(args.out).with_name(Path(args.out).stem + ".errors.csv")
        buf = io.StringIO()
        ingest.write_errors(buf, parsed.errors)
        extra[str(err_path)] = buf.getvalue()
    for e in parsed.errors:
        log.warning("row %d: %s", e.row, e.message)
    run.diagnostics = {
        "records": len(parsed.records),
        "malformed_rows": len(parsed.errors),
        "window_minutes": rep.window_minutes,
        "flags": [f"{z}:{f}" for z, f in rep.flags()],
        "slices": {z.zone: {k: {"mean": v.mean, "variance": v.variance, "n_slices": v.n_slices}
                            for k, v in z.slices.items()} for z in rep.zones},
    }
    run.emit(dumps_config(cfg), extra)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(v):
    k = int(v)
    if k < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return k


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taxiq", description="Queueing-network analysis of taxi markets.")
    p.add_argument("--version", action="version", version=f"taxiq {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("-o", "--out", help="output file (default stdout)")
        return sp

    sp = command("validate", cmd_validate, "check a network config")
    sp.add_argument("config")

    for name, fn, help_ in (("balance", cmd_balance, "solve flow balance"),
                            ("metrics", cmd_metrics, "per-queue and network metrics")):
        sp = command(name, fn, help_)
        sp.add_argument("config")
        sp.add_argument("--method", choices=("fixed-point", "lp"), default="fixed-point")

    sp = command("stationary", cmd_stationary, "truncated product-form distribution")
    sp.add_argument("config")
    sp.add_argument("--tail", type=float, default=1e-6, help="per-coordinate tail mass for automatic caps")
    sp.add_argument("--cap", type=int, help="one cap for every coordinate")

    for name, fn, help_ in (("simulate", cmd_simulate, "discrete-event simulation"),
                            ("compare", cmd_compare, "simulation vs closed forms")):
        sp = command(name, fn, help_)
        sp.add_argument("config")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--horizon", type=float, default=10_000.0, help="minutes")
        sp.add_argument("--warmup", type=float, default=None, help="minutes (default 10%% of horizon)")
        sp.add_argument("--reps", type=_positive_int, default=1)
        sp.add_argument("--jobs", type=_positive_int, default=1)
        if name == "compare":
            sp.add_argument("--tol", type=float, default=sim.REL_TOL)

    sp = command("test-arrivals", cmd_test_arrivals, "Poisson tests on count series")
    sp.add_argument("counts")
    sp.add_argument("--method", action="append", choices=(*arrivals.METHODS, "all"), default=None)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--split-seed", type=int, default=0)

    sp = command("ingest", cmd_ingest, "estimate a network config from trip records")
    sp.add_argument("trips")
    sp.add_argument("--zone-map")
    sp.add_argument("--base", help="config supplying adjacency, server counts and fallbacks")
    sp.add_argument("--c-road", help="server count, one value or one per zone (comma separated)")
    sp.add_argument("--start", type=float, help="window start, epoch seconds")
    sp.add_argument("--end", type=float, help="window end, epoch seconds")
    sp.add_argument("--weekdays", help="comma separated, 0 = Monday")
    sp.add_argument("--hours", help="daily range such as 18-19")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TAXIQ_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "test-arrivals" and args.method is None:
        args.method = ["all"]
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"taxiq: {e}", file=sys.stderr)
        return 2
    except Findings as e:
        print(f"taxiq: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
