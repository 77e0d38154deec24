"""Cost functions induced by a utility, and the workload-constrained fixed point.

C_j(q, c) = Psi'(c) * int_0^q Phi_j(u) du / mu_j, so dC_j/dq_j = (1/mu_j) dU_j/dc_j.
q*(w, rho) minimizes sum_j C_j(q_j, rho_j) subject to sum_j q_j / mu_j >= w.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .allocator import allocate
from .capacity import _state, balanced_point
from .markov_env import stream
from .utility import PowerPhi, UtilityFamily

WORKLOAD_FLOOR = 1e-3


@dataclass
class FixedPoint:
    q: np.ndarray
    theta: float
    w: float
    state: Optional[int] = None


def cost_terms(utility: UtilityFamily, mu, q, c) -> np.ndarray:
    """Per-user costs C_j(q_j, c_j)."""
    mu = np.asarray(mu, dtype=float)
    q = np.asarray(q, dtype=float)
    integ = np.array([float(phi.integral(x)) for phi, x in zip(utility.phis, q)])
    with np.errstate(invalid="ignore"):
        out = utility.psi.d1(np.asarray(c, dtype=float)) * integ / mu
    return np.where(integ == 0, 0.0, out)


def total_cost(utility: UtilityFamily, mu, q, c) -> float:
    return float(np.sum(cost_terms(utility, mu, q, c)))


def cost_marginal(utility: UtilityFamily, mu, q, c) -> np.ndarray:
    """dC_j/dq_j = Phi_j(q_j) Psi'(c_j) / mu_j."""
    return utility.weights(q) * utility.psi.d1(np.asarray(c, dtype=float)) / np.asarray(mu, dtype=float)


def lyapunov(utility: UtilityFamily, mu, q, rho) -> float:
    """Total cost evaluated at the balanced rates."""
    return total_cost(utility, mu, q, rho)


def _queues(utility, theta, slopes):
    return np.array([float(phi.inverse(theta / s)) for phi, s in zip(utility.phis, slopes)])


def fixed_point(utility: UtilityFamily, mu, w: float, rho, state: Optional[int] = None, rtol: float = 1e-13) -> FixedPoint:
    """Minimize sum_j C_j(q_j, rho_j) over sum q_j/mu_j >= w, q >= 0.

    Stationarity gives Phi_j(q_j) Psi'(rho_j) = theta for every user, so the
    workload is increasing in theta; theta is bracketed by doubling and then
    bisected until the workload matches w to ``rtol``.
    """
    mu = np.asarray(mu, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if w < 0:
        raise ValueError("workload must be nonnegative")
    if np.any(rho <= 0):
        raise ValueError("balanced rates must be positive")
    J = len(mu)
    if w == 0:
        return FixedPoint(np.zeros(J), 0.0, 0.0, state)
    slopes = utility.psi.d1(rho)

    def load(theta):
        return float(np.sum(_queues(utility, theta, slopes) / mu))

    lo, hi = 0.0, 1.0
    while load(hi) < w:
        lo, hi = hi, 2.0 * hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if load(mid) < w:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    return FixedPoint(_queues(utility, theta, slopes), theta, float(w), state)


def fixed_point_batch(utility: UtilityFamily, mu, ws, rho) -> np.ndarray:
    """q*(w, rho) for an array of workloads; shape ws.shape + (J,).

    For power families with a common exponent q* is linear in w, so one
    solve at w = 1 serves the whole batch.
    """
    ws = np.asarray(ws, dtype=float)
    if utility.homogeneous:
        unit = fixed_point(utility, mu, 1.0, rho).q
        return ws[..., None] * unit
    flat = [fixed_point(utility, mu, float(w), rho).q for w in ws.ravel()]
    return np.reshape(flat, ws.shape + (len(mu),))


def duality_roundtrip(region, i, utility: UtilityFamily, mu, w: float) -> float:
    """||allocate(q*(w, rho(i))) - rho(i)||; zero when the allocation reproduces the balanced point."""
    rho = balanced_point(region, i)
    if w <= 0:
        return 0.0
    fp = fixed_point(utility, mu, w, rho, i)
    return float(np.linalg.norm(allocate(region, i, fp.q, utility).c - rho))


def full_utilization_check(
    region, i, utility: UtilityFamily, mu, w: float, sigma: float, n_samples: int = 100,
    floor: float = WORKLOAD_FLOOR, seed: int = 0,
) -> float:
    """Worst |sum allocate(q) - sum rho(i)| over q within ``sigma`` of q*(w, rho(i)).

    Samples are uniform in the ball, clipped to q >= 0, and kept only when
    their workload is at least ``floor``.
    """
    if w < floor:
        raise ValueError(f"workload {w} is below the floor {floor}")
    R = _state(region, i)
    mu = np.asarray(mu, dtype=float)
    rho = balanced_point(R, 0)
    target = float(np.sum(rho))
    center = fixed_point(utility, mu, w, rho).q
    rng = stream(seed, "probe")
    J = len(center)
    gap = 0.0
    done = 0
    while done < n_samples:
        d = rng.standard_normal(J)
        d *= sigma * rng.random() ** (1.0 / J) / max(np.linalg.norm(d), 1e-300)
        q = np.maximum(center + d, 0.0)
        if np.sum(q / mu) < floor:
            continue
        gap = max(gap, abs(float(np.sum(allocate(R, 0, q, utility).c)) - target))
        done += 1
        if sigma == 0:
            break
    return gap


def admissible_sigma(region, i, utility, mu, w, tol=1e-4, ladder=(0.001, 0.003, 0.01, 0.03, 0.1, 0.3), n_samples=50, seed=0):
    """Largest radius (as a fraction of w) on ``ladder`` whose utilization gap stays below ``tol``."""
    best = 0.0
    for frac in ladder:
        if full_utilization_check(region, i, utility, mu, w, frac * w, n_samples, seed=seed) < tol:
            best = frac
        else:
            break
    return best


def phi_inverse_is_closed_form(utility: UtilityFamily) -> bool:
    return all(isinstance(p, PowerPhi) for p in utility.phis)
