"""Simulate trips from a known config, estimate every parameter back and compare."""

import argparse
from pathlib import Path

from taxiq.flow import solve_fixed_point
from taxiq.ingest import estimate_network_config
from taxiq.metrics import network_metrics
from taxiq.model import load_config
from taxiq.sim import SimParams, generate_trips

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "roundtrip_two_zone.json"
FIELDS = ("lambda_p", "p_ats", "lambda_v_ats", "lambda_v_tts", "p_pick_ats", "p_pick_tts",
          "mu_ats", "mu_tts", "mu_road")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", nargs="?", default=str(CONFIG))
    ap.add_argument("--horizon", type=float, default=11_000.0)
    ap.add_argument("--warmup", type=float, default=1000.0)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)
    cfg = load_config(args.config)
    recs = generate_trips(cfg, SimParams(horizon=args.horizon, warmup=args.warmup, seed=args.seed))
    est, rep = estimate_network_config(recs, zones=cfg.zones, adjacency=cfg.adjacency,
                                       c_road=[p.c_road for p in cfg.params])
    print(f"{len(recs)} records over {rep.window_minutes:g} minutes")
    print("zone,field,true,estimated,rel_error")
    for z, p, q in zip(cfg.zones, cfg.params, est.params):
        for f in FIELDS:
            a, b = getattr(p, f), getattr(q, f)
            err = (b - a) / a if a else float("nan")
            print(f"{z},{f},{a:.6g},{b:.6g},{err:+.4f}")
    a, b = solve_fixed_point(cfg), solve_fixed_point(est)
    ma, mb = network_metrics(cfg, a), network_metrics(est, b)
    for i, z in enumerate(cfg.zones):
        lam_a = a.lambda_pv_ats[i] + a.lambda_pv_tts[i]
        lam_b = b.lambda_pv_ats[i] + b.lambda_pv_tts[i]
        print(f"{z},lambda_pv,{lam_a:.6g},{lam_b:.6g},{(lam_b - lam_a) / lam_a:+.4f}")
        for s in ("ats", "tts"):
            wa, wb = ma.zones[i].queue(s).w, mb.zones[i].queue(s).w
            print(f"{z},w_{s},{wa:.6g},{wb:.6g},{(wb - wa) / wa:+.4f}")
    flags = list(rep.flags())
    print("flags:", ", ".join(f"{z}:{f}" for z, f in flags) if flags else "none")
    print(f"network W {ma.w_network:.6g} vs {mb.w_network:.6g} ({mb.w_network / ma.w_network - 1:+.4f})")


if __name__ == "__main__":
    main()
