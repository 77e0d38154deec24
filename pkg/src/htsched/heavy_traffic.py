"""The r-indexed heavy-traffic sequence, its scalings, and empirical limit diagnostics.

System r has arrival rates lambda + theta / r, environment holding rates
gamma / r**2 and runs for r**2 T physical time units; its diffusion-scaled
paths live on [0, T].
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .capacity import balanced_points
from .dual_cost import fixed_point_batch, lyapunov
from .markov_env import EnvGenerator, sample_path, scale_holding
from .queue_sim import SystemTrajectory, TrafficSpec, make_policy, simulate
from .utility import UtilityFamily


@dataclass(frozen=True)
class HeavyTrafficSpec:
    nominal_rate: np.ndarray  # (K, J) lambda_j(i) = mu_j rho_j(i)
    theta: np.ndarray  # (K, J)
    mu: np.ndarray
    r_values: tuple = (4, 8, 16, 32)
    replicas: int = 20
    horizon: float = 10.0  # scaled time
    grid_step: float = 0.01  # scaled time
    arrival_scv: Optional[np.ndarray] = None
    service_scv: Optional[np.ndarray] = None
    initial_state: int = 0

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.nominal_rate, dtype=float))
        theta = np.broadcast_to(np.asarray(self.theta, dtype=float), lam.shape).copy()
        object.__setattr__(self, "nominal_rate", lam)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "r_values", tuple(self.r_values))
        if np.any(lam <= 0):
            raise ValueError("nominal arrival rates must be positive")
        if list(self.r_values) != sorted(set(self.r_values)) or min(self.r_values) <= 0:
            raise ValueError("r_values must be positive and strictly increasing")
        for r in self.r_values:
            if np.any(lam + theta / r <= 0):
                raise ValueError(f"arrival rate lambda + theta/r is nonpositive at r={r}")
        if not (self.horizon > 0 and self.grid_step > 0):
            raise ValueError("horizon and grid_step must be positive")


def nominal_rates(region, mu) -> np.ndarray:
    """lambda_j(i) = mu_j rho_j(i) from the balanced points."""
    return balanced_points(region) * np.asarray(mu, dtype=float)


@dataclass
class SequenceMember:
    r: float
    traffic: TrafficSpec
    generator: EnvGenerator
    horizon: float  # physical
    grid_step: float  # physical


def build_sequence(spec: HeavyTrafficSpec, base_generator: EnvGenerator) -> list:
    K, J = spec.nominal_rate.shape
    if base_generator.state_count != K:
        raise ValueError(f"generator has {base_generator.state_count} states, traffic has {K}")
    a2 = np.ones((K, J)) if spec.arrival_scv is None else spec.arrival_scv
    b2 = np.ones(J) if spec.service_scv is None else spec.service_scv
    out = []
    for r in spec.r_values:
        lam_r = spec.nominal_rate + spec.theta / r
        out.append(
            SequenceMember(
                r, TrafficSpec(lam_r, a2, spec.mu, b2), scale_holding(base_generator, r),
                r * r * spec.horizon, r * r * spec.grid_step,
            )
        )
    return out


# ---------------------------------------------------------------- scaling


@dataclass
class ScaledPaths:
    r: float
    times: np.ndarray  # scaled time
    states: np.ndarray
    Q_hat: np.ndarray
    W_hat: np.ndarray
    Y_hat: np.ndarray
    Q_bar: np.ndarray
    W_bar: np.ndarray
    Y_bar: np.ndarray
    T_bar: np.ndarray
    mu: np.ndarray = field(repr=False)


def diffusion_scale(traj: SystemTrajectory, r: float, grid=None) -> ScaledPaths:
    """Q(r^2 t)/r etc. on the scaled grid, plus the fluid versions (divided by r^2).

    The trajectory grid must contain the physical times r^2 t.
    """
    r2 = r * r
    scaled_t = traj.times / r2
    if grid is None:
        idx = np.arange(len(traj.times))
    else:
        grid = np.asarray(grid, dtype=float)
        if r2 * grid.max() > traj.times[-1] * (1 + 1e-12):
            raise ValueError(f"trajectory horizon {traj.times[-1]} is shorter than r^2 * {grid.max()}")
        idx = np.searchsorted(traj.times, r2 * grid - 1e-9 * r2)
        if np.any(np.abs(traj.times[idx] - r2 * grid) > 1e-9 * r2):
            raise ValueError("requested grid is not aligned with the trajectory grid")
    Q = traj.Q[idx].astype(float)
    return ScaledPaths(
        r, scaled_t[idx], traj.states[idx],
        Q / r, traj.W[idx] / r, traj.Y[idx] / r,
        Q / r2, traj.W[idx] / r2, traj.Y[idx] / r2, traj.T[idx] / r2,
        traj.mu,
    )


def collapse_metric(scaled: ScaledPaths, utility: UtilityFamily, mu, region) -> tuple:
    """(sup_t, time-average) of ||Q_hat(t) - q*(W_hat(t), rho(alpha(t)))||."""
    rho = balanced_points(region)
    target = np.empty_like(scaled.Q_hat)
    for i in np.unique(scaled.states):
        sel = scaled.states == i
        target[sel] = fixed_point_batch(utility, mu, scaled.W_hat[sel], rho[i])
    dev = np.linalg.norm(scaled.Q_hat - target, axis=1)
    return float(dev.max()), float(dev.mean())


def lyapunov_path(Q: np.ndarray, states: np.ndarray, utility: UtilityFamily, mu, rho_by_state) -> np.ndarray:
    return np.array([lyapunov(utility, mu, q, rho_by_state[i]) for q, i in zip(Q, states)])


def fluid_diagnostics(traj: SystemTrajectory, r: float, utility: UtilityFamily, mu, rho_by_state):
    """(sup_t ||Q_bar(t)||, psi(Q_bar(t), alpha(t)) on the grid)."""
    sc = diffusion_scale(traj, r)
    sup = float(np.linalg.norm(sc.Q_bar, axis=1).max())
    return sup, lyapunov_path(sc.Q_bar, sc.states, utility, mu, rho_by_state)


def within_interval_increments(values: np.ndarray, states: np.ndarray, times: np.ndarray, jump_times: np.ndarray) -> np.ndarray:
    """Grid increments of ``values`` whose two endpoints lie in the same holding interval."""
    seg = np.searchsorted(jump_times, times, side="right")
    same = seg[1:] == seg[:-1]
    return np.diff(values)[same]


# ---------------------------------------------------------------- experiments


@dataclass
class ReplicaResult:
    r: float
    seed: int
    policy: str
    sup_collapse: float
    avg_collapse: float
    avg_W_hat: float
    sup_fluid: float
    psi_drift: float  # mean within-interval increment of psi(Q_bar) per unit scaled time
    W_hat_mid: float  # W_hat at T / 2
    W_hat_end: float


def run_replica(member: SequenceMember, region, utility: UtilityFamily, policy: str, seed: int, initial_state: int = 0, keep=False):
    env = sample_path(member.generator, member.horizon, initial_state, seed)
    pol = make_policy(policy, region, utility, member.traffic.mu)
    traj = simulate(member.traffic, region, pol, env, member.horizon, member.grid_step, seed)
    r = member.r
    sc = diffusion_scale(traj, r)
    mu = member.traffic.mu
    rho = balanced_points(region)
    sup_c, avg_c = collapse_metric(sc, utility, mu, region)
    sup_f = float(np.linalg.norm(sc.Q_bar, axis=1).max())
    psi = lyapunov_path(sc.Q_bar, sc.states, utility, mu, rho)
    inc = within_interval_increments(psi, sc.states, sc.times, env.jump_times / (r * r))
    dt = sc.times[1] - sc.times[0]
    drift = float(inc.sum() / (len(inc) * dt)) if len(inc) else 0.0
    mid = int(np.argmin(np.abs(sc.times - sc.times[-1] / 2)))
    res = ReplicaResult(
        r, seed, policy, sup_c, avg_c, float(sc.W_hat.mean()), sup_f, drift,
        float(sc.W_hat[mid]), float(sc.W_hat[-1]),
    )
    return (res, sc) if keep else res


def _run_task(args):
    return run_replica(*args)


def run_ladder(spec: HeavyTrafficSpec, base_generator, region, utility, policies=("utility-max",), seeds=None, jobs: int = 1, root_seed: int = 0):
    """All (r, seed, policy) replicas; the same seed reuses the same random
    streams for every policy and every r (common random numbers)."""
    seeds = list(range(root_seed, root_seed + spec.replicas)) if seeds is None else list(seeds)
    tasks = [
        (m, region, utility, p, s, spec.initial_state)
        for m in build_sequence(spec, base_generator)
        for s in seeds
        for p in policies
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_task, tasks))
    return [_run_task(t) for t in tasks]


def summarize(results, key: str) -> dict:
    """{(r, policy): (mean, standard error)} of a ReplicaResult field."""
    out = {}
    groups = {}
    for res in results:
        groups.setdefault((res.r, res.policy), []).append(getattr(res, key))
    for k, vals in groups.items():
        v = np.asarray(vals, dtype=float)
        se = v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else float("nan")
        out[k] = (float(v.mean()), float(se))
    return out


def nonincreasing_within_se(means: Sequence[float], ses: Sequence[float], k: float = 1.0) -> bool:
    """Each step of the ladder may rise by at most k combined standard errors."""
    for a, b, sa, sb in zip(means[:-1], means[1:], ses[:-1], ses[1:]):
        if b - a > k * math.hypot(sa, sb):
            return False
    return True


def workload_comparison(spec: HeavyTrafficSpec, base_generator, region, utility, policies, seeds, jobs: int = 1) -> dict:
    """Paired-seed mean of W_hat(policy) - W_hat(utility-max) at the largest r.

    Returns {policy: (mean difference, standard error, mean W_hat)}.
    """
    if "utility-max" not in policies or len(policies) < 2:
        raise ValueError("need utility-max and at least one other policy")
    top = HeavyTrafficSpec(**{**spec.__dict__, "r_values": (spec.r_values[-1],)})
    results = run_ladder(top, base_generator, region, utility, tuple(policies), seeds, jobs)
    by = {(res.policy, res.seed): res.avg_W_hat for res in results}
    seeds = sorted({res.seed for res in results})
    out = {}
    for p in policies:
        d = np.array([by[(p, s)] - by[("utility-max", s)] for s in seeds])
        se = d.std(ddof=1) / math.sqrt(len(d)) if len(d) > 1 else 0.0
        out[p] = (float(d.mean()), float(se), float(np.mean([by[(p, s)] for s in seeds])))
    return out
