"""Shared helpers for running every CLI subcommand twice and comparing outputs."""

import json
from pathlib import Path

import numpy as np

from taxiq.arrivals import CountSeries, write_counts_csv
from taxiq.cli import main
from taxiq.fixtures import roundtrip_two_zone
from taxiq.ingest import write_trips
from taxiq.sim import SimParams, generate_trips

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def make_inputs(workdir: Path) -> dict:
    """Small counts and trips files for the data-driven subcommands."""
    rng = np.random.default_rng(12)
    counts = workdir / "counts.csv"
    write_counts_csv(counts, [CountSeries(rng.poisson(5.0, 60), zone="A", label="passenger"),
                              CountSeries(rng.poisson(2.0, 30), 5.0, zone="B", label="pooled")])
    trips = workdir / "trips.csv"
    recs = generate_trips(roundtrip_two_zone(), SimParams(horizon=400.0, warmup=40.0, seed=1))
    with open(trips, "w", newline="") as fh:
        write_trips(fh, recs)
    return {"counts": str(counts), "trips": str(trips)}


def subcommand_cases(inputs: dict) -> dict:
    two = str(CONFIGS / "two_zone.json")
    return {
        "validate": ["validate", two],
        "balance": ["balance", two, "--method", "lp"],
        "metrics": ["metrics", two],
        "stationary": ["stationary", str(CONFIGS / "single_zone_ctmc.json"), "--tail", "1e-4"],
        "simulate": ["simulate", two, "--seed", "42", "--reps", "5", "--horizon", "300"],
        "compare": ["compare", two, "--seed", "3", "--reps", "2", "--horizon", "200", "--tol", "10"],
        "test-arrivals": ["test-arrivals", inputs["counts"], "--split-seed", "4"],
        "ingest": ["ingest", inputs["trips"], "--c-road", "12,10"],
    }


def _snapshot(outdir: Path) -> dict:
    snap = {}
    for p in sorted(outdir.iterdir()):
        if p.name.endswith(".manifest.json"):
            m = json.loads(p.read_text())
            m.pop("wall_clock_seconds")
            snap[p.name] = json.dumps(m, sort_keys=True).encode()
        else:
            snap[p.name] = p.read_bytes()
    return snap


def run_twice(argv: list, outdir: Path):
    """Run argv twice writing to outdir; returns (exit codes, first snapshot, second snapshot)."""
    outdir.mkdir(parents=True, exist_ok=True)
    out = str(outdir / "out.csv")
    codes, snaps = [], []
    for _ in range(2):
        for p in outdir.iterdir():
            p.unlink()
        codes.append(main([*argv, "-o", out]))
        snaps.append(_snapshot(outdir))
    return codes, snaps[0], snaps[1]
