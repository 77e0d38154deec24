"""Reflected one-dimensional workload diffusion with regime-switching coefficients.

X has drift sum_j theta_j(i)/mu_j and independent arrival and service noise
per user; W = X + Y with Y the discrete Skorohod regulator. The step grid is
refined inside every holding interval so regime jumps fall on grid points.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .dual_cost import fixed_point_batch
from .markov_env import EnvGenerator, EnvPath, sample_path, stream


@dataclass(frozen=True)
class RdrsSpec:
    generator: EnvGenerator
    theta: np.ndarray  # (K, J)
    gamma_E: np.ndarray  # (K, J) diagonals lambda_j(i) alpha_j^2(i)
    gamma_S: np.ndarray  # (K, J) diagonals lambda_j(i) beta_j^2
    mu: np.ndarray
    dt: float
    horizon: float

    def __post_init__(self):
        K = self.generator.state_count
        mu = np.asarray(self.mu, dtype=float)
        for name in ("theta", "gamma_E", "gamma_S"):
            v = np.asarray(getattr(self, name), dtype=float)
            v = np.broadcast_to(v, (K, len(mu))).copy()
            object.__setattr__(self, name, v)
        object.__setattr__(self, "mu", mu)
        if np.any(self.gamma_E < 0) or np.any(self.gamma_S < 0):
            raise ValueError("diffusion diagonals must be nonnegative")
        if not (self.dt > 0 and self.horizon > 0):
            raise ValueError("dt and horizon must be positive")

    @property
    def drift(self) -> np.ndarray:
        """Per-state workload drift sum_j theta_j(i) / mu_j."""
        return (self.theta / self.mu).sum(axis=1)

    @property
    def variance(self) -> np.ndarray:
        """Per-state workload variance rate sum_j (Gamma^E_jj + Gamma^S_jj) / mu_j^2."""
        return ((self.gamma_E + self.gamma_S) / self.mu**2).sum(axis=1)


def spec_from_traffic(generator, nominal_rate, theta, mu, arrival_scv=1.0, service_scv=1.0, dt=None, horizon=10.0) -> RdrsSpec:
    """Limit coefficients from nominal rates and SCVs; dt defaults to 1e-3 of the
    shortest mean holding time."""
    lam = np.atleast_2d(np.asarray(nominal_rate, dtype=float))
    a2 = np.broadcast_to(np.asarray(arrival_scv, dtype=float), lam.shape)
    b2 = np.broadcast_to(np.asarray(service_scv, dtype=float), lam.shape)
    if dt is None:
        if generator.state_count == 1:
            raise ValueError("a single-state chain has no holding time; pass dt explicitly")
        dt = 1e-3 * float(np.min(generator.mean_holding_times))
    return RdrsSpec(generator, theta, lam * a2, lam * b2, mu, dt, horizon)


@dataclass
class RdrsPath:
    times: np.ndarray
    states: np.ndarray  # regime on [times[k], times[k+1])
    X: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    step_sd: float  # largest one-step standard deviation of X

    @property
    def tol_reflect(self) -> float:
        return 2.0 * self.step_sd

    def at(self, t: float) -> float:
        """W at grid time t (t must be a grid point)."""
        k = int(np.searchsorted(self.times, t - 1e-12))
        if k >= len(self.times) or abs(self.times[k] - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not on the path grid")
        return float(self.W[k])

    def time_average(self) -> float:
        h = np.diff(self.times)
        return float(np.sum(self.W[:-1] * h) / (self.times[-1] - self.times[0]))

    def to_csv(self, path, Q_hat: Optional[np.ndarray] = None) -> None:
        cols = [self.times, self.states, self.X, self.Y, self.W]
        header = "time,state,X,Y,W"
        if Q_hat is not None:
            cols += list(Q_hat.T)
            header += "," + ",".join(f"Q_{j + 1}" for j in range(Q_hat.shape[1]))
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")


def _grid(env: EnvPath, horizon: float, dt: float, checkpoints: Sequence[float] = ()):
    cuts = np.unique(np.concatenate([env.jump_times[env.jump_times < horizon], [horizon], np.asarray(checkpoints, dtype=float)]))
    cuts = cuts[(cuts >= 0) & (cuts <= horizon)]
    if cuts[0] > 0:
        cuts = np.concatenate([[0.0], cuts])
    pieces = [np.zeros(1)]
    for a, b in zip(cuts[:-1], cuts[1:]):
        n = max(1, int(math.ceil((b - a) / dt - 1e-9)))
        pieces.append(a + (b - a) * np.arange(1, n + 1) / n)
    times = np.concatenate(pieces)
    return times


def simulate_rdrs(spec: RdrsSpec, env_path: EnvPath, seed=0, checkpoints: Sequence[float] = (), reflect: bool = True) -> RdrsPath:
    """Euler-Maruyama path of X, the discrete Skorohod regulator Y, and W = X + Y.

    Coefficients use the regime at each step's left endpoint; ``checkpoints``
    are forced onto the grid. ``reflect=False`` returns the free process (Y = 0).
    """
    if env_path.horizon < spec.horizon - 1e-12:
        raise ValueError("environment path is shorter than the diffusion horizon")
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "rdrs")
    times = _grid(env_path, spec.horizon, spec.dt, checkpoints)
    h = np.diff(times)
    left = env_path.state_at(times[:-1])
    sq = np.sqrt(h)
    dX = spec.drift[left] * h
    inv_mu = 1.0 / spec.mu
    step_var = np.zeros_like(h)
    for gamma in (spec.gamma_E, spec.gamma_S):
        if not np.any(gamma):
            continue
        sd = np.sqrt(gamma) * inv_mu  # (K, J)
        Z = rng.standard_normal((len(h), len(spec.mu)))
        dX += sq * np.einsum("kj,kj->k", sd[left], Z)
        step_var += h * (sd[left] ** 2).sum(axis=1)
    X = np.concatenate([[0.0], np.cumsum(dX)])
    if reflect:
        Y = np.maximum.accumulate(np.maximum(-X, 0.0))
    else:
        Y = np.zeros_like(X)
    W = X + Y
    states = np.append(left, left[-1] if len(left) else env_path.states[0])
    return RdrsPath(times, states, X, Y, W, float(np.sqrt(step_var.max())) if len(h) else 0.0)


def complementarity_violations(path: RdrsPath) -> dict:
    """Counts of pathwise violations of the reflection conditions."""
    dY = np.diff(path.Y)
    return {
        "negative_W": int(np.sum(path.W < -1e-12)),
        "Y_start": float(path.Y[0]),
        "Y_decrease": int(np.sum(dY < 0)),
        "push_away_from_zero": int(np.sum((dY > 0) & (path.W[1:] > path.tol_reflect))),
    }


def lift_to_queues(path: RdrsPath, utility, mu, rho_by_state) -> np.ndarray:
    """Q_hat(t) = q*(W(t), rho(alpha(t))) pointwise."""
    Q = np.empty((len(path.times), len(mu)))
    for i in np.unique(path.states):
        sel = path.states == i
        Q[sel] = fixed_point_batch(utility, mu, np.maximum(path.W[sel], 0.0), rho_by_state[i])
    return Q


def ensemble(spec: RdrsSpec, n_paths: int, seed: int = 0, initial_state: int = 0, t_probe: Optional[float] = None):
    """W(t_probe), W(horizon) and time-averaged W for ``n_paths`` independent paths."""
    probe = spec.horizon / 2 if t_probe is None else t_probe
    at_probe, at_end, avg = [], [], []
    for k in range(n_paths):
        env = sample_path(spec.generator, spec.horizon, initial_state, stream(seed, "rdrs", k, 0))
        p = simulate_rdrs(spec, env, stream(seed, "rdrs", k, 1), checkpoints=(probe,))
        at_probe.append(p.at(probe))
        at_end.append(float(p.W[-1]))
        avg.append(p.time_average())
    return np.array(at_probe), np.array(at_end), np.array(avg)


def ks_critical_value(n: int, m: int, alpha: float) -> float:
    """Asymptotic two-sample KS critical value c(alpha) sqrt((n + m) / (n m))."""
    return math.sqrt(-math.log(alpha / 2) / 2) * math.sqrt((n + m) / (n * m))


def compare_to_simulation(rdrs_samples, sim_samples, alpha: float = 0.01, min_rdrs: int = 100, min_sim: int = 20) -> dict:
    """Two-sample comparison of W_hat at a probe time."""
    a = np.asarray(rdrs_samples, dtype=float)
    b = np.asarray(sim_samples, dtype=float)
    if len(a) < min_rdrs or len(b) < min_sim:
        raise ValueError(f"ensembles too small: {len(a)} diffusion paths (need {min_rdrs}), {len(b)} simulated (need {min_sim})")
    res = stats.ks_2samp(a, b)
    crit = ks_critical_value(len(a), len(b), alpha)
    return {
        "rdrs_mean": float(a.mean()), "rdrs_var": float(a.var(ddof=1)),
        "sim_mean": float(b.mean()), "sim_var": float(b.var(ddof=1)),
        "n_rdrs": len(a), "n_sim": len(b),
        "ks": float(res.statistic), "p_value": float(res.pvalue),
        "alpha": alpha, "critical": crit, "passed": bool(res.statistic < crit),
    }


def summary_json(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
