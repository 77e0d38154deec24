"""Maximize sum_j w_j Psi(c_j) over a facet region {c >= 0, h_k(c) <= 0}.

Stages, cheapest first:

1. single linear facet: if the maximizer over {a.c <= b, c >= 0} (closed form
   up to a scalar root) is feasible for every facet, it is optimal;
2. for small polyhedral regions, a vertex satisfying the KKT conditions;
3. log-barrier Newton path from a strictly feasible radial point;
4. active-set Newton on the KKT equations, seeded from the barrier point,
   which lands on the exact active manifold. Rejected if it loses
   feasibility, dual sign, or objective value.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .capacity import LinearFacet, StateRegion
from .utility import LinearPsi, Psi


class SolverError(RuntimeError):
    def __init__(self, msg, residual=float("nan")):
        super().__init__(f"{msg} (residual {residual:.3g})")
        self.residual = residual


@dataclass
class Solution:
    c: np.ndarray
    eta: np.ndarray  # facet multipliers, in the caller's weight units
    bound_mult: np.ndarray  # multipliers of -c_j <= 0
    method: str
    iterations: int = 0


GAP = 1e-11
FEAS_TOL = 1e-12


def _objective(w, psi, c):
    if psi.needs_positive and np.any(c <= 0):
        return -np.inf
    return float(np.sum(w * psi(c)))


def _single_facet(w, psi: Psi, facet: LinearFacet):
    """argmax sum w Psi(c) s.t. a.c = b, c >= 0, for a > 0."""
    a, b = facet.coef, facet.bound
    if isinstance(psi, LinearPsi) or b <= 0:
        return None

    def rates(log_eta):
        with np.errstate(over="ignore", divide="ignore"):
            c = psi.d1_inverse(np.exp(log_eta) * a / w)
        return np.maximum(c, 0.0)

    lo, hi = -50.0, 50.0
    # sum a.c(eta) is nonincreasing in eta
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(a @ rates(mid)) > b:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    log_eta = 0.5 * (lo + hi)
    c = rates(log_eta)
    # remove residual bisection error along the positive coordinates
    pos = c > 0
    if pos.any():
        c[pos] += (b - float(a @ c)) * a[pos] / float(a[pos] @ a[pos])
    return c, float(np.exp(log_eta))


def _vertex(R: StateRegion, w, psi: Psi, max_candidates=400):
    """KKT-certified vertex of a polyhedral region, or None.

    Enumerates J-subsets of the facet and bound constraints, solves for the
    vertex and keeps the first one that is feasible with nonnegative
    multipliers. Used for linear objectives and for corner optima.
    """
    J = R.J
    if not all(isinstance(f, LinearFacet) for f in R.facets):
        return None
    A = np.vstack([np.array([f.coef for f in R.facets]), -np.eye(J)])
    b = np.concatenate([[f.bound for f in R.facets], np.zeros(J)])
    if math.comb(len(b), J) > max_candidates:
        return None
    for S in itertools.combinations(range(len(b)), J):
        GA = A[list(S)]
        if abs(np.linalg.det(GA)) < 1e-12:
            continue
        c = np.linalg.solve(GA, b[list(S)])
        if np.max(A @ c - b) > FEAS_TOL * max(1.0, float(np.max(np.abs(b)))):
            continue
        c = np.maximum(c, 0.0)
        with np.errstate(divide="ignore"):
            grad = w * psi.d1(c)
        if not np.all(np.isfinite(grad)):
            continue
        lam = np.linalg.solve(GA.T, grad)
        if np.all(lam >= -1e-12):
            full = np.zeros(len(b))
            full[list(S)] = np.maximum(lam, 0.0)
            return c, full
    return None


def _constraints(R: StateRegion, c):
    g = np.concatenate([R.values(c), -c])
    G = np.vstack([R.grads(c), -np.eye(R.J)])
    return g, G


def _barrier(R: StateRegion, w, psi: Psi, max_newton=60):
    J = R.J
    s = R.radial_limit(np.ones(J))
    c = np.full(J, 0.5 * s)
    m = R.B + J
    t = 1.0
    iters = 0

    def phi(x, t):
        g = np.concatenate([R.values(x), -x])
        if np.any(g >= 0):
            return -np.inf
        return t * _objective(w, psi, x) + float(np.sum(np.log(-g)))

    while True:
        for _ in range(max_newton):
            iters += 1
            g, G = _constraints(R, c)
            grad = t * w * psi.d1(c) + G.T @ (1.0 / g)
            H = np.diag(t * w * psi.d2(c))
            for k, f in enumerate(R.facets):
                if not f.linear:
                    H += f.hess(c) / g[k]
            H -= (G / g[:, None] ** 2).T @ G
            try:
                step = -np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                break
            dec = float(grad @ step)
            if dec / 2 < 1e-12:
                break
            base = phi(c, t)
            a = 1.0
            while a > 1e-14:
                trial = c + a * step
                if phi(trial, t) >= base + 0.25 * a * float(grad @ step):
                    break
                a *= 0.5
            else:
                break
            c = trial
        if m / t < GAP:
            break
        t *= 8.0
    g, _ = _constraints(R, c)
    lam = 1.0 / (t * -g)
    return c, lam, iters


def _polish(R: StateRegion, w, psi: Psi, c0, lam0, active):
    J = R.J
    B = R.B
    A = np.flatnonzero(active)
    if len(A) == 0 or len(A) > J:
        return None
    c = c0.copy()
    eta = lam0[A].copy()
    for _ in range(40):
        g, G = _constraints(R, c)
        GA = G[A]
        r1 = w * psi.d1(c) - GA.T @ eta
        r2 = g[A]
        res = max(np.max(np.abs(r1)), np.max(np.abs(r2)))
        if res < 1e-15:
            break
        Hf = np.diag(w * psi.d2(c))
        for pos, k in enumerate(A):
            if k < B and not R.facets[k].linear:
                Hf -= eta[pos] * R.facets[k].hess(c)
        Kmat = np.block([[Hf, -GA.T], [GA, np.zeros((len(A), len(A)))]])
        try:
            d = np.linalg.solve(Kmat, -np.concatenate([r1, r2]))
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(d)):
            return None
        c = c + d[:J]
        eta = eta + d[J:]
        if psi.needs_positive and np.any(c <= 0):
            return None
    else:
        return None
    if np.any(eta < -1e-10):
        return None
    g, _ = _constraints(R, c)
    if np.max(g) > FEAS_TOL * max(1.0, float(np.max(np.abs(c)))):
        return None
    # snap tiny negative coordinates produced by active bounds
    c = np.where(np.abs(c) < 1e-15, 0.0, c)
    full = np.zeros(B + J)
    full[A] = np.maximum(eta, 0.0)
    return c, full


def maximize_separable(R: StateRegion, weights, psi: Psi) -> Solution:
    w = np.asarray(weights, dtype=float)
    J = R.J
    if w.shape != (J,):
        raise ValueError(f"weights have shape {w.shape}, region has J={J}")
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive; reduce the region for zero queues")
    scale = float(np.max(w))
    wn = w / scale
    B = R.B

    if np.max(R.values(np.zeros(J))) >= 0:
        return Solution(np.zeros(J), np.zeros(B), np.zeros(J), "degenerate")

    if not isinstance(psi, LinearPsi):
        for k, f in enumerate(R.facets):
            if isinstance(f, LinearFacet) and np.all(f.coef > 0):
                out = _single_facet(wn, psi, f)
                if out is None:
                    continue
                c, eta = out
                if R.max_violation(c) <= FEAS_TOL * max(1.0, f.bound):
                    etas = np.zeros(B)
                    etas[k] = eta * scale
                    bm = np.where(c == 0, np.maximum(eta * f.coef - wn * psi.d1(c), 0.0), 0.0) * scale
                    return Solution(c, etas, bm, "facet")

    vert = _vertex(R, wn, psi)
    if vert is not None:
        c, mult = vert
        return Solution(c, mult[:B] * scale, mult[B:] * scale, "vertex")

    c_ip, lam, iters = _barrier(R, wn, psi)
    g, _ = _constraints(R, c_ip)
    active = lam > -g
    pol = _polish(R, wn, psi, c_ip, lam, active)
    if pol is not None and _objective(wn, psi, pol[0]) >= _objective(wn, psi, c_ip) - 1e-12:
        c, mult = pol
        method = "active-set"
    else:
        c, mult = c_ip, np.where(active, lam, 0.0)
        method = "barrier"
    return Solution(c, mult[:B] * scale, mult[B:] * scale, method, iters)
