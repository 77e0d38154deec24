"""Event-driven simulation of J parallel queues sharing a switching capacity region.

Between events the queue vector and the regime are constant, so the rate
vector chosen by the policy is constant and service advances linearly in
bits. Events are arrivals, head-of-line completions and regime switches.
"""
from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .allocator import allocate
from .capacity import BOUNDARY_TOL, Membership, _state, balanced_points, membership
from .markov_env import EnvPath, stream
from .solver import maximize_separable
from .utility import LINEAR, UtilityFamily

ARRIVAL, DEPARTURE, SWITCH = "arrival", "departure", "regime-switch"


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrafficSpec:
    """Per-state arrival rates and SCVs (K x J), per-user service rates and length SCVs.

    A zero arrival rate disables that user's arrivals in that state.
    """

    arrival_rate: np.ndarray
    arrival_scv: np.ndarray
    mu: np.ndarray
    service_scv: np.ndarray

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.arrival_rate, dtype=float))
        a2 = np.atleast_2d(np.asarray(self.arrival_scv, dtype=float))
        mu = np.asarray(self.mu, dtype=float).ravel()
        b2 = np.asarray(self.service_scv, dtype=float).ravel()
        if a2.shape == (1, lam.shape[1]) and lam.shape[0] > 1:
            a2 = np.repeat(a2, lam.shape[0], axis=0)
        if lam.shape != a2.shape or lam.shape[1] != len(mu) or len(b2) != len(mu):
            raise ValueError(
                f"inconsistent traffic shapes: rates {lam.shape}, arrival SCVs {a2.shape}, "
                f"mu {mu.shape}, service SCVs {b2.shape}"
            )
        if np.any(lam < 0) or np.any(a2 <= 0) or np.any(mu <= 0) or np.any(b2 <= 0):
            raise ValueError("rates must be >= 0 and SCVs, mu strictly positive")
        for name, val in (("arrival_rate", lam), ("arrival_scv", a2), ("mu", mu), ("service_scv", b2)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def K(self) -> int:
        return self.arrival_rate.shape[0]

    @property
    def J(self) -> int:
        return len(self.mu)


# ---------------------------------------------------------------- policies


class Policy:
    """Rate rule (q, i) -> c, memoized on the integer queue vector."""

    name = "policy"

    def __init__(self, region, check: bool = True):
        self.region = region
        self.check = check
        self._cache: dict = {}

    def _key(self, q, i):
        return (i, q)

    def _rate(self, q: np.ndarray, i: int) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, q, i: int) -> np.ndarray:
        q = tuple(int(x) for x in q)
        key = self._key(q, i)
        c = self._cache.get(key)
        if c is None:
            qa = np.array(q, dtype=float)
            c = np.where(qa > 0, self._rate(qa, i), 0.0)
            if self.check and membership(self.region, i, c, BOUNDARY_TOL) == Membership.OUTSIDE:
                raise SimulationError(f"policy {self.name} returned infeasible rates {c} in state {i} at q={q}")
            c.setflags(write=False)
            self._cache[key] = c
        return c


class UtilityMaxPolicy(Policy):
    name = "utility-max"

    def __init__(self, region, utility: UtilityFamily, check=True):
        super().__init__(region, check)
        self.utility = utility

    def _key(self, q, i):
        # homogeneous families give the same allocation on every ray
        if self.utility.homogeneous and any(q):
            g = math.gcd(*q)
            q = tuple(x // g for x in q)
        return (i, q)

    def _rate(self, q, i):
        return allocate(self.region, i, q, self.utility).c


def maxweight_rate(region, i, q, mu) -> np.ndarray:
    """argmax sum_j q_j mu_j c_j over R(i), with c_j = 0 where q_j = 0."""
    from .capacity import reduce

    R = _state(region, i)
    q = np.asarray(q, dtype=float)
    c = np.zeros(R.J)
    kept = np.flatnonzero(q > 0)
    if len(kept) == 0:
        return c
    zero = tuple(np.flatnonzero(q == 0))
    sub = reduce(R, 0, zero) if zero else R
    c[kept] = maximize_separable(sub, (q * np.asarray(mu, dtype=float))[kept], LINEAR).c
    return c


class MaxWeightPolicy(Policy):
    name = "maxweight"

    def __init__(self, region, mu, check=True):
        super().__init__(region, check)
        self.mu = np.asarray(mu, dtype=float)

    def _rate(self, q, i):
        return maxweight_rate(self.region, i, q, self.mu)


class StaticRhoPolicy(Policy):
    """Serve every nonempty queue at its balanced rate rho_j(i)."""

    name = "static-rho"

    def __init__(self, region, check=True):
        super().__init__(region, check)
        self.rho = balanced_points(region)

    def _rate(self, q, i):
        return self.rho[i].copy()


class FixedRatePolicy(Policy):
    """Constant rates per state (rates[i]), applied to nonempty queues."""

    name = "fixed"

    def __init__(self, region, rates, check=True):
        super().__init__(region, check)
        self.rates = np.atleast_2d(np.asarray(rates, dtype=float))

    def _rate(self, q, i):
        return self.rates[i].copy()


def make_policy(name: str, region, utility: Optional[UtilityFamily] = None, mu=None) -> Policy:
    if name == "utility-max":
        if utility is None:
            raise ValueError("utility-max needs a utility family")
        return UtilityMaxPolicy(region, utility)
    if name == "maxweight":
        if mu is None:
            raise ValueError("maxweight needs service rates mu")
        return MaxWeightPolicy(region, mu)
    if name == "static-rho":
        return StaticRhoPolicy(region)
    raise ValueError(f"unknown policy {name!r}")


# ---------------------------------------------------------------- random draws


class _GammaStream:
    """Buffered gamma draws with given mean and SCV; SCV = 1 is exponential."""

    def __init__(self, rng: np.random.Generator, mean: float, scv: float, block: int = 4096):
        self.rng, self.block = rng, block
        self.shape, self.scale = 1.0 / scv, mean * scv
        self.buf = []

    def __call__(self) -> float:
        if not self.buf:
            self.buf = self.rng.gamma(self.shape, self.scale, self.block).tolist()
            self.buf.reverse()
        return self.buf.pop()


# ---------------------------------------------------------------- trajectory


@dataclass
class SystemTrajectory:
    times: np.ndarray
    states: np.ndarray
    Q: np.ndarray  # (n, J) queue lengths
    T: np.ndarray  # (n, J) cumulative bits served
    W: np.ndarray  # (n,) workload sum_j Q_j / mu_j
    Y: np.ndarray  # (n,) unused capacity
    area: np.ndarray  # (n, J) int_0^t Q_j(s) ds
    mu: np.ndarray
    env_path: EnvPath = field(repr=False)
    arrivals: np.ndarray = None  # total per user
    departures: np.ndarray = None
    events: Optional[list] = field(default=None, repr=False)
    horizon: float = 0.0

    @property
    def J(self) -> int:
        return self.Q.shape[1]

    def to_csv(self, path) -> None:
        J = self.J
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "state"] + [f"Q_{j + 1}" for j in range(J)] + ["W", "Y"] + [f"T_{j + 1}" for j in range(J)])
            for k in range(len(self.times)):
                w.writerow(
                    [repr(float(self.times[k])), int(self.states[k])]
                    + [int(x) for x in self.Q[k]]
                    + [repr(float(self.W[k])), repr(float(self.Y[k]))]
                    + [repr(float(x)) for x in self.T[k]]
                )

    def events_to_jsonl(self, path) -> None:
        if self.events is None:
            raise ValueError("event log was not recorded")
        with open(path, "w") as fh:
            for t, kind, user, state in self.events:
                fh.write(json.dumps({"time": t, "type": kind, "user": user, "state": state}) + "\n")


def unused_capacity(trajectory: SystemTrajectory, region) -> np.ndarray:
    """Y(t) = sum_j (int_0^t rho_j(alpha(s)) ds - T_j(t)) on the trajectory grid."""
    rho = balanced_points(region)
    offered = trajectory.env_path.integrate(rho.sum(axis=1), trajectory.times)
    return offered - trajectory.T.sum(axis=1)


def simulate(
    traffic: TrafficSpec,
    region,
    policy: Callable,
    env_path: EnvPath,
    horizon: float,
    grid_step: float,
    seed: int = 0,
    log_events: bool = False,
    arrivals: Optional[list] = None,
    lengths: Optional[list] = None,
) -> SystemTrajectory:
    """Simulate from an empty system over [0, horizon].

    ``policy(q, i)`` returns the rate vector. ``arrivals`` and ``lengths``
    (per-user lists of arrival epochs and packet lengths) replace the random
    streams when given, for trace-driven runs.
    """
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if horizon > env_path.horizon + 1e-12:
        raise ValueError(f"horizon {horizon} exceeds the environment path horizon {env_path.horizon}")
    J, K = traffic.J, traffic.K
    lam = traffic.arrival_rate
    mu = traffic.mu
    inf = math.inf

    if arrivals is None:
        gaps = [
            [
                _GammaStream(stream(seed, "arrivals", j, i), 1.0 / lam[i, j], traffic.arrival_scv[i, j]) if lam[i, j] > 0 else None
                for i in range(K)
            ]
            for j in range(J)
        ]
    trace = None if arrivals is None else [deque(float(x) for x in sorted(a)) for a in arrivals]
    if lengths is None:
        size = [_GammaStream(stream(seed, "services", j), 1.0 / mu[j], traffic.service_scv[j]) for j in range(J)]
    else:
        size_trace = [deque(float(x) for x in l) for l in lengths]
        size = [size_trace[j].popleft for j in range(J)]

    jumps = env_path.jump_times.tolist()[1:] + [inf]
    env_states = env_path.states.tolist()
    n_env = 0
    state = env_states[0]

    def first_arrival(j, t, i):
        if trace is not None:
            return trace[j].popleft() if trace[j] else inf
        g = gaps[j][i]
        return t + g() if g is not None else inf

    t = 0.0
    q = [0] * J
    buf = [deque() for _ in range(J)]
    rem = [0.0] * J
    served = [0.0] * J
    area = [0.0] * J
    n_arr = [0] * J
    n_dep = [0] * J
    nxt_arr = [first_arrival(j, 0.0, state) for j in range(J)]
    c = [0.0] * J
    events = [] if log_events else None

    n_grid = int(math.floor(horizon / grid_step + 1e-9)) + 1
    g_times = np.arange(n_grid) * grid_step
    g_Q = np.zeros((n_grid, J), dtype=np.int64)
    g_T = np.zeros((n_grid, J))
    g_A = np.zeros((n_grid, J))
    g_S = np.zeros(n_grid, dtype=np.int64)
    gi = 0
    g_next = 0.0
    rng_J = range(J)

    while True:
        # next event
        t_ev = jumps[n_env]
        kind, who = SWITCH, -1
        for j in rng_J:
            if nxt_arr[j] < t_ev:
                t_ev, kind, who = nxt_arr[j], ARRIVAL, j
        for j in rng_J:
            if q[j] and c[j] > 0:
                td = t + rem[j] / c[j]
                if td < t_ev:
                    t_ev, kind, who = td, DEPARTURE, j
        # grid points strictly before the event see the current state
        while g_next < t_ev and gi < n_grid:
            dt = g_next - t
            for j in rng_J:
                g_Q[gi, j] = q[j]
                g_T[gi, j] = served[j] + c[j] * dt
                g_A[gi, j] = area[j] + q[j] * dt
            g_S[gi] = state
            gi += 1
            g_next = gi * grid_step
        if t_ev > horizon or gi >= n_grid:
            break
        dt = t_ev - t
        for j in rng_J:
            if c[j]:
                served[j] += c[j] * dt
                rem[j] -= c[j] * dt
            if q[j]:
                area[j] += q[j] * dt
        t = t_ev
        if kind == ARRIVAL:
            L = size[who]()
            if q[who] == 0:
                rem[who] = L
            else:
                buf[who].append(L)
            q[who] += 1
            n_arr[who] += 1
            if trace is not None:
                nxt_arr[who] = trace[who].popleft() if trace[who] else inf
            else:
                nxt_arr[who] = t + gaps[who][state]()
        elif kind == DEPARTURE:
            q[who] -= 1
            n_dep[who] += 1
            rem[who] = buf[who].popleft() if q[who] else 0.0
        else:
            n_env += 1
            state = env_states[n_env]
            if trace is None:
                for j in rng_J:
                    g = gaps[j][state]
                    nxt_arr[j] = t + g() if g is not None else inf
        if events is not None:
            events.append((float(t), kind, who, state))
        c = policy(q, state).tolist()

    Tg = g_T
    mu_arr = np.asarray(mu)
    W = (g_Q / mu_arr).sum(axis=1)
    traj = SystemTrajectory(
        g_times, g_S, g_Q, Tg, W, np.zeros(n_grid), g_A, mu_arr, env_path,
        np.array(n_arr), np.array(n_dep), events, float(horizon),
    )
    traj.Y = unused_capacity(traj, region)
    return traj


def time_average(trajectory: SystemTrajectory, n_batches: int = 100):
    """Exact time-averaged queue lengths and batch-means standard errors."""
    A = trajectory.area
    n = len(trajectory.times)
    edges = np.linspace(0, n - 1, n_batches + 1).round().astype(int)
    dt = np.diff(trajectory.times[edges])
    batch = np.diff(A[edges], axis=0) / dt[:, None]
    mean = A[-1] / trajectory.times[-1]
    se = batch.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return mean, se
