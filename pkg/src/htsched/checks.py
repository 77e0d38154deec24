"""Property checks run by ``htsched verify`` against a configured system."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .allocator import KKT_TOL, allocate, is_radially_homogeneous
from .capacity import Membership, balanced_point, facet_count, membership, sum_capacity
from .dual_cost import cost_marginal, duality_roundtrip, fixed_point, full_utilization_check
from .markov_env import stationary_distribution, stream
from .rdrs import RdrsSpec, complementarity_violations, simulate_rdrs
from .markov_env import build_generator, sample_path


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _random_feasible(R, rng, n):
    C = sum_capacity(R)
    pts = []
    while len(pts) < n:
        c = rng.random(R.J) * C
        if R.contains(c, 0.0):
            pts.append(c)
    return np.array(pts)


def check_facet_count(cfg):
    L2, B2 = facet_count(2)
    L3, _ = facet_count(3)
    ok = (L2, B2, L3) == (5, 3, 16)
    return ok, f"L(2)={L2}, B(2)={B2}, L(3)={L3}"


def check_stationary(cfg):
    gen = cfg.generator()
    pi = stationary_distribution(gen)
    res = float(np.linalg.norm(pi @ gen.generator))
    return res <= 1e-10 and abs(pi.sum() - 1) < 1e-12, f"pi={np.round(pi, 6).tolist()}, residual={res:.2e}"


def check_balanced_points(cfg):
    region = cfg.build_region()
    worst = 0.0
    for i in range(region.K):
        rho = balanced_point(region, i)
        if membership(region, i, rho) != Membership.BOUNDARY:
            return False, f"balanced point of state {i} is not on the boundary"
        worst = max(worst, abs(rho.sum() - sum_capacity(region, i)))
    return worst < 1e-8, f"max |sum rho - C_U| = {worst:.2e}"


def check_kkt(cfg, n=100, n_points=300):
    region, u = cfg.build_region(), cfg.build_utility()
    rng = stream(cfg.seed, "probe", 1)
    worst, beaten = 0.0, 0
    for i in range(region.K):
        pts = _random_feasible(region[i], rng, n_points)
        for _ in range(n // region.K):
            q = rng.exponential(5.0, region.J) + 1e-3
            a = allocate(region, i, q, u)
            worst = max(worst, a.residual)
            w = u.weights(q)
            best = np.max((w * u.psi(pts)).sum(axis=1))
            if u.value(q, a.c) < best - 1e-12:
                beaten += 1
    return worst < KKT_TOL and beaten == 0, f"max residual {worst:.2e}, beaten by random points {beaten} times"


def check_homogeneity(cfg, n=50):
    region, u = cfg.build_region(), cfg.build_utility()
    rng = stream(cfg.seed, "probe", 2)
    worst = 0.0
    for _ in range(n):
        i = int(rng.integers(region.K))
        q = rng.exponential(5.0, region.J) + 1e-2
        a = float(rng.uniform(0.1, 10))
        worst = max(worst, is_radially_homogeneous(region, i, u, q, a)[1])
    return worst < 1e-6, f"max ||L(aq) - L(q)|| = {worst:.2e}"


def check_duality(cfg):
    region, u = cfg.build_region(), cfg.build_utility()
    mu = np.asarray(cfg.traffic.mu)
    worst = max(duality_roundtrip(region, i, u, mu, w) for i in range(region.K) for w in (0.5, 1.0, 4.0, 10.0))
    return worst < 1e-6, f"max ||allocate(q*) - rho|| = {worst:.2e}"


def check_full_utilization(cfg, n=50):
    region, u = cfg.build_region(), cfg.build_utility()
    mu = np.asarray(cfg.traffic.mu)
    gap = max(full_utilization_check(region, i, u, mu, 4.0, 0.04, n, seed=cfg.seed) for i in range(region.K))
    return gap < 1e-4, f"max sum-rate gap {gap:.2e} at radius 0.01 w"


def check_marginal_identity(cfg, n=200):
    u = cfg.build_utility()
    mu = np.asarray(cfg.traffic.mu)
    rng = stream(cfg.seed, "probe", 3)
    worst = 0.0
    for _ in range(n):
        q = rng.exponential(3.0, len(mu))
        c = rng.exponential(1.0, len(mu)) + 1e-3
        worst = max(worst, float(np.max(np.abs(cost_marginal(u, mu, q, c) - u.marginal(q, c) / mu))))
    return worst < 1e-10, f"max deviation {worst:.2e}"


def check_fixed_point(cfg):
    u = cfg.build_utility()
    mu = np.asarray(cfg.traffic.mu)
    region = cfg.build_region()
    worst = 0.0
    for i in range(region.K):
        rho = balanced_point(region, i)
        for w in (0.1, 1.0, 7.0):
            fp = fixed_point(u, mu, w, rho)
            if np.any(fp.q <= 0):
                return False, "nonpositive fixed point"
            worst = max(worst, abs(float(np.sum(fp.q / mu)) - w))
    return worst < 1e-8, f"max workload mismatch {worst:.2e}"


def check_skorohod(cfg, n=20):
    gen = build_generator([1.0], [[0.0]])
    worst = 0
    for k in range(n):
        spec = RdrsSpec(gen, [[-0.5]], [[1.0]], [[1.0]], [1.0], 1e-3, 5.0)
        p = simulate_rdrs(spec, sample_path(gen, 5.0), stream(cfg.seed, "rdrs", 99, k))
        v = complementarity_violations(p)
        worst += v["negative_W"] + v["Y_decrease"] + v["push_away_from_zero"] + (v["Y_start"] != 0)
    return worst == 0, f"{worst} violations over {n} paths"


CHECKS = [
    ("facet count", check_facet_count),
    ("stationary distribution", check_stationary),
    ("balanced points", check_balanced_points),
    ("KKT certification", check_kkt),
    ("radial homogeneity", check_homogeneity),
    ("duality round trip", check_duality),
    ("full utilization", check_full_utilization),
    ("marginal identity", check_marginal_identity),
    ("fixed-point tightness", check_fixed_point),
    ("Skorohod complementarity", check_skorohod),
]


def run_all(cfg) -> list:
    out = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn(cfg)
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out
