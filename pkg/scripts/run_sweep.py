"""Run the heavy-traffic ladder on a config and print collapse, fluid and workload tables.

    python3 scripts/run_sweep.py [--config FILE] [--replicas N] [--jobs N]
"""
import argparse
import json

from htsched.cli import _ht_spec
from htsched.config import ExperimentConfig, bundled
from htsched.heavy_traffic import HeavyTrafficSpec, nonincreasing_within_se, run_ladder, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--replicas", type=int)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    doc = bundled() if args.config is None else json.load(open(args.config))
    if args.replicas:
        doc.setdefault("heavy_traffic", {})["replicas"] = args.replicas
    cfg = ExperimentConfig.from_dict(doc)
    region, u = cfg.build_region(), cfg.build_utility()
    spec = _ht_spec(cfg, region)
    policies = tuple(cfg.heavy_traffic.policies)
    res = run_ladder(spec, cfg.generator(), region, u, ("utility-max",), jobs=args.jobs, root_seed=cfg.seed)
    for key in ("sup_collapse", "sup_fluid", "psi_drift"):
        table = summarize(res, key)
        means = [table[(r, "utility-max")][0] for r in spec.r_values]
        ses = [table[(r, "utility-max")][1] for r in spec.r_values]
        row = "  ".join(f"r={r}: {m:.4f}+-{s:.4f}" for r, m, s in zip(spec.r_values, means, ses))
        print(f"{key:<13} {row}  non-increasing: {nonincreasing_within_se(means, ses)}")
    others = [p for p in policies if p != "utility-max"]
    if others:
        top = HeavyTrafficSpec(**{**spec.__dict__, "r_values": (spec.r_values[-1],)})
        base = run_ladder(top, cfg.generator(), region, u, tuple(others), jobs=args.jobs, root_seed=cfg.seed)
        table = summarize([x for x in res if x.r == spec.r_values[-1]] + base, "avg_W_hat")
        for (r, p), (m, s) in sorted(table.items()):
            print(f"avg W_hat at r={r}: {p:<12} {m:.4f} +- {s:.4f}")


if __name__ == "__main__":
    main()
