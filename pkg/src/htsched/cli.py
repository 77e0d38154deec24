"""Command-line entry point: ``htsched <subcommand> --config FILE``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure,
3 a verification check failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .capacity import balanced_points
from .config import ConfigError, ExperimentConfig, apply_override, bundled
from .heavy_traffic import HeavyTrafficSpec, nominal_rates, run_ladder, summarize
from .markov_env import STREAMS, sample_path
from .mimo import bc_region_points, mac_boundary_point, priority_grid
from .queue_sim import TrafficSpec, make_policy, simulate
from .rdrs import compare_to_simulation, ensemble, simulate_rdrs, spec_from_traffic
from .solver import maximize_separable
from .utility import LINEAR

log = logging.getLogger("htsched")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3


def _load(args) -> ExperimentConfig:
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"not valid JSON: {exc}") from None
    else:
        doc = bundled()
    for assignment in args.set or []:
        apply_override(doc, assignment)
    if args.seed is not None:
        doc["seed"] = args.seed
    return ExperimentConfig.from_dict(doc)


def _outdir(args, cfg, sub) -> str:
    out = args.out or os.path.join(cfg.output.directory, sub)
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError("--out", f"cannot create output directory: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError("--out", f"output directory {out!r} is not writable")
    return out


def write_manifest(out, cfg: ExperimentConfig, sub: str, args) -> None:
    manifest = {
        "subcommand": sub,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "streams": {k: f"SeedSequence({cfg.seed}, spawn_key=({v}, ...))" for k, v in STREAMS.items()},
        "overrides": list(args.set or []),
        "versions": {
            "htsched": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)


def _ht_spec(cfg, region) -> HeavyTrafficSpec:
    ht = cfg.heavy_traffic
    mu = np.asarray(cfg.traffic.mu, dtype=float)
    return HeavyTrafficSpec(
        nominal_rates(region, mu), cfg.theta(), mu, tuple(ht.r_values), ht.replicas, ht.horizon, ht.grid_step,
        cfg.arrival_scv(), cfg.service_scv(), cfg.environment.initial_state,
    )


def _rdrs_spec(cfg, region):
    mu = np.asarray(cfg.traffic.mu, dtype=float)
    return spec_from_traffic(
        cfg.generator(), nominal_rates(region, mu), cfg.theta(), mu, cfg.arrival_scv(), cfg.service_scv(),
        cfg.rdrs.dt, cfg.heavy_traffic.horizon,
    )


# ---------------------------------------------------------------- subcommands


def cmd_simulate(args, cfg):
    out = _outdir(args, cfg, "simulate")
    region, u = cfg.build_region(), cfg.build_utility()
    mu = np.asarray(cfg.traffic.mu, dtype=float)
    lam = cfg.traffic.arrival_rate
    lam = nominal_rates(region, mu) if lam is None else np.asarray(lam, dtype=float)
    traffic = TrafficSpec(lam, cfg.arrival_scv(), mu, cfg.service_scv())
    sim = cfg.simulation
    env = sample_path(cfg.generator(), sim.horizon, cfg.environment.initial_state, cfg.seed)
    policy = make_policy(sim.policy, region, u, mu)
    traj = simulate(traffic, region, policy, env, sim.horizon, sim.grid_step, cfg.seed, log_events=sim.log_events)
    traj.to_csv(os.path.join(out, "trajectory.csv"))
    if sim.log_events:
        traj.events_to_jsonl(os.path.join(out, "events.jsonl"))
    summary = {
        "mean_queue": (traj.area[-1] / traj.times[-1]).tolist(),
        "arrivals": traj.arrivals.tolist(),
        "departures": traj.departures.tolist(),
        "final_Y": float(traj.Y[-1]),
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    write_manifest(out, cfg, "simulate", args)
    print(f"simulated {sim.horizon:g} time units; mean queue {np.round(summary['mean_queue'], 4).tolist()} -> {out}")
    return EXIT_OK


def cmd_sweep(args, cfg):
    out = _outdir(args, cfg, "sweep")
    region, u = cfg.build_region(), cfg.build_utility()
    spec = _ht_spec(cfg, region)
    results = run_ladder(spec, cfg.generator(), region, u, tuple(cfg.heavy_traffic.policies), jobs=args.jobs, root_seed=cfg.seed)
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "seed", "policy", "sup-collapse", "avg-collapse", "avg-W_hat", "sup-fluid-norm"])
        for res in results:
            w.writerow([res.r, res.seed, res.policy, repr(res.sup_collapse), repr(res.avg_collapse), repr(res.avg_W_hat), repr(res.sup_fluid)])
    summary = {
        key: {f"r={k[0]:g},{k[1]}": v for k, v in summarize(results, key).items()}
        for key in ("sup_collapse", "avg_collapse", "avg_W_hat", "sup_fluid")
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    write_manifest(out, cfg, "sweep", args)
    for k, (m, se) in sorted(summarize(results, "sup_collapse").items()):
        print(f"r={k[0]:>4g} {k[1]:<12} sup-collapse {m:.4f} +- {se:.4f}")
    return EXIT_OK


def cmd_rdrs(args, cfg):
    out = _outdir(args, cfg, "rdrs")
    region = cfg.build_region()
    spec = _rdrs_spec(cfg, region)
    probe = cfg.rdrs.t_probe or spec.horizon / 2
    at_probe, at_end, avg = ensemble(spec, cfg.rdrs.paths, cfg.seed, cfg.environment.initial_state, probe)
    env = sample_path(spec.generator, spec.horizon, cfg.environment.initial_state, cfg.seed)
    simulate_rdrs(spec, env, cfg.seed).to_csv(os.path.join(out, "path.csv"))
    summary = {
        "paths": cfg.rdrs.paths, "dt": spec.dt, "t_probe": probe,
        "mean_W_probe": float(at_probe.mean()), "var_W_probe": float(at_probe.var(ddof=1)) if len(at_probe) > 1 else 0.0,
        "mean_W_end": float(at_end.mean()), "mean_time_average": float(avg.mean()),
        "drift_by_state": spec.drift.tolist(), "variance_by_state": spec.variance.tolist(),
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    write_manifest(out, cfg, "rdrs", args)
    print(f"{cfg.rdrs.paths} diffusion paths; mean W(t={probe:g}) = {summary['mean_W_probe']:.4f} -> {out}")
    return EXIT_OK


def cmd_compare(args, cfg):
    out = _outdir(args, cfg, "compare")
    region, u = cfg.build_region(), cfg.build_utility()
    spec = _ht_spec(cfg, region)
    top = HeavyTrafficSpec(**{**spec.__dict__, "r_values": (spec.r_values[-1],)})
    sims = run_ladder(top, cfg.generator(), region, u, ("utility-max",), jobs=args.jobs, root_seed=cfg.seed)
    rspec = _rdrs_spec(cfg, region)
    probe = cfg.rdrs.t_probe or rspec.horizon / 2
    if abs(probe - rspec.horizon / 2) > 1e-12:
        raise ConfigError("rdrs.t_probe", "compare uses the midpoint of the horizon")
    at_probe, _, _ = ensemble(rspec, cfg.rdrs.paths, cfg.seed, cfg.environment.initial_state, probe)
    summary = compare_to_simulation(at_probe, [s.W_hat_mid for s in sims], cfg.rdrs.alpha)
    summary["r"] = spec.r_values[-1]
    with open(os.path.join(out, "compare.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    write_manifest(out, cfg, "compare", args)
    print(f"KS {summary['ks']:.4f} vs critical {summary['critical']:.4f}: {'pass' if summary['passed'] else 'FAIL'}")
    return EXIT_OK if summary["passed"] else EXIT_CHECK


def cmd_capacity_trace(args, cfg):
    out = _outdir(args, cfg, "capacity-trace")
    region = cfg.build_region()
    J = region.J
    grid = priority_grid(args.points, J)
    rows = []
    kind = cfg.region.kind
    ch = cfg.channel_set()
    for i in range(region.K):
        if kind == "bc2":
            cloud = bc_region_points(ch, cfg.region.total_power, i, cfg.region.split_grid_size, grid)
            rows += [[i] + [float("nan")] * J + list(c) for c in cloud.envelope]
            continue
        for nu in grid:
            if kind in ("mac2", "mimo-mac"):
                c = mac_boundary_point(ch, i, nu).rates
            else:
                w = np.maximum(nu, 1e-9)
                c = maximize_separable(region[i], w, LINEAR).c
            rows.append([i] + list(nu) + list(c))
    with open(os.path.join(out, "boundary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state"] + [f"nu_{j + 1}" for j in range(J)] + [f"c_{j + 1}" for j in range(J)])
        for row in rows:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
    write_manifest(out, cfg, "capacity-trace", args)
    print(f"{len(rows)} boundary points -> {out}")
    return EXIT_OK


def cmd_verify(args, cfg):
    from .checks import run_all

    results = run_all(cfg)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}  ({r.seconds:.2f}s)")
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "some checks failed")
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "rdrs": cmd_rdrs,
    "compare": cmd_compare,
    "capacity-trace": cmd_capacity_trace,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="htsched", description="Utility-maximizing scheduling in a switching environment.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="experiment JSON (default: bundled symmetric 2-user example)")
        sp.add_argument("--set", action="append", metavar="PATH=VALUE", help="override a config field, e.g. heavy_traffic.replicas=5")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for replica sweeps")
        sp.add_argument("--out", help="output directory (default: <output.directory>/<subcommand>)")
        sp.add_argument("--seed", type=int, help="root seed (overrides the config)")
        if name == "capacity-trace":
            sp.add_argument("--points", type=int, default=21, help="priority-grid size")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be at least 1")
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures map to one exit code
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
