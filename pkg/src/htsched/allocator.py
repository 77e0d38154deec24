"""Utility-maximizing rate allocation Lambda(q, i) over a capacity region."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .capacity import RegionError, ReducedRegion, StateRegion, _state, reduce
from .solver import SolverError, maximize_separable
from .utility import UtilityFamily

KKT_TOL = 1e-7


@dataclass
class Allocation:
    c: np.ndarray
    active: tuple
    eta: np.ndarray
    residual: float
    method: str = ""


def kkt_residual(region, i, q, c, eta, utility: UtilityFamily) -> float:
    """max_j |c_j (dU_j/dc_j - sum_k eta_k dh_k/dc_j)| + max_k |eta_k h_k(c)|.

    Multipliers are nonnegative and enter stationarity as dU = sum eta grad h.
    """
    R = _state(region, i)
    q = np.asarray(q, dtype=float)
    c = np.asarray(c, dtype=float)
    eta = np.asarray(eta, dtype=float)
    pos = c > 0
    stat = 0.0
    if pos.any():
        dU = np.zeros(R.J)
        with np.errstate(divide="ignore", invalid="ignore"):
            dU[pos] = utility.weights(q)[pos] * utility.psi.d1(c[pos])
        grad_h = R.grads(c)
        stat = float(np.max(np.abs(c[pos] * (dU[pos] - eta @ grad_h[:, pos]))))
    comp = float(np.max(np.abs(eta * R.values(c)))) if len(eta) else 0.0
    return stat + comp


def _solve(R: StateRegion, weights, utility: UtilityFamily):
    sol = maximize_separable(R, weights, utility.psi)
    return sol


def allocate(region, i, q, utility: UtilityFamily) -> Allocation:
    """Lambda(q, i): maximize sum Phi_j(q_j) Psi(c_j) over R(i).

    Users with q_j = 0 get rate 0 and the remaining users are optimized over
    the reduced region; q = 0 gives c = 0.
    """
    R = _state(region, i)
    q = np.asarray(q, dtype=float)
    if q.shape != (R.J,):
        raise RegionError(f"queue vector has shape {q.shape}, region has J={R.J}")
    if utility.J != R.J:
        raise RegionError(f"utility has {utility.J} users, region has {R.J}")
    if np.any(q < 0):
        raise ValueError("queue lengths must be nonnegative")
    B = R.B
    if not np.any(q > 0):
        return Allocation(np.zeros(R.J), (), np.zeros(B), 0.0, "zero")

    zero = tuple(np.flatnonzero(q == 0))
    sub = reduce(R, 0, zero) if zero else R
    kept = np.flatnonzero(q > 0)
    w = utility.weights(q)[kept]
    sol = _solve(sub, w, utility)
    c = np.zeros(R.J)
    c[kept] = sol.c
    eta = sol.eta
    residual = kkt_residual(R, 0, q, c, eta, utility)
    active = tuple(int(k) for k in np.flatnonzero(np.abs(R.values(c)) <= 1e-8))
    return Allocation(c, active, eta, residual, sol.method)


def allocate_certified(region, i, q, utility: UtilityFamily) -> Allocation:
    """allocate(), raising SolverError unless the KKT residual is below 1e-7."""
    a = allocate(region, i, q, utility)
    if a.residual >= KKT_TOL:
        raise SolverError("allocation failed KKT certification", a.residual)
    return a


def objective(utility: UtilityFamily, q, c) -> float:
    return utility.value(q, c)


def is_radially_homogeneous(region, i, utility: UtilityFamily, q, a: float, tol: float = 1e-6):
    """(holds, discrepancy) for Lambda(a q) == Lambda(q)."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0) or a <= 0:
        raise ValueError("need q > 0 and a > 0")
    d = float(np.linalg.norm(allocate(region, i, a * q, utility).c - allocate(region, i, q, utility).c))
    return d <= tol, d
