"""MIMO MAC/BC capacity regions from channel matrices.

Conventions: H[i, j] is the N x M downlink matrix of user j in state i, the
uplink matrix is its conjugate transpose, and rates use the natural log
without a 1/2 prefactor.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .capacity import CapacityRegion, LinearFacet, StateRegion


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelSet:
    """Channel matrices per state and user, shape (K, J, N, M), complex."""

    H: np.ndarray
    powers: Optional[np.ndarray] = None
    total_power: Optional[float] = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=complex)
        if H.ndim != 4:
            raise ChannelError(f"channels must have shape (K, J, N, M), got {H.shape}")
        object.__setattr__(self, "H", H)
        if self.powers is not None:
            p = np.asarray(self.powers, dtype=float)
            if p.shape != (H.shape[1],) or np.any(p <= 0):
                raise ChannelError("need one positive power per user")
            object.__setattr__(self, "powers", p)
        if self.total_power is not None and not self.total_power > 0:
            raise ChannelError("total power must be positive")

    @property
    def K(self):
        return self.H.shape[0]

    @property
    def J(self):
        return self.H.shape[1]

    @property
    def N(self):
        return self.H.shape[2]

    @property
    def M(self):
        return self.H.shape[3]

    @classmethod
    def scalar(cls, gains, powers=None, total_power=None):
        """M = N = 1 channels from a (K, J) array of complex gains."""
        g = np.asarray(gains, dtype=complex)
        return cls(g[:, :, None, None], powers, total_power)


def logdet(X: np.ndarray) -> float:
    """log|X| for Hermitian positive definite X via Cholesky."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError as exc:
        raise ChannelError("log-det argument is not positive definite") from exc
    return float(2.0 * np.sum(np.log(np.real(np.diag(L)))))


def _gram(Hj, G):
    """H_j^dagger Gamma_j H_j (M x M)."""
    return Hj.conj().T @ G @ Hj


# ---------------------------------------------------------------- scalar-covariance MAC


def mac_state_region(H_users: np.ndarray, powers: Sequence[float]) -> StateRegion:
    """Polymatroid sum_{j in S} c_j <= log|I + sum_{j in S} P_j H_j^dag H_j|, for N = 1."""
    H_users = np.asarray(H_users, dtype=complex)
    J, N, M = H_users.shape
    if N != 1:
        raise ChannelError("scalar MAC region needs N = 1; use mac_boundary_point for N > 1")
    facets = []
    sum_index = None
    for size in range(1, J + 1):
        for S in itertools.combinations(range(J), size):
            X = np.eye(M, dtype=complex)
            for j in S:
                X += powers[j] * (H_users[j].conj().T @ H_users[j])
            coef = np.zeros(J)
            coef[list(S)] = 1.0
            if size == J:
                sum_index = len(facets)
            facets.append(LinearFacet(coef, logdet(X)))
    return StateRegion(tuple(facets), J, sum_index, "mac")


def mac_region_scalar(channels: ChannelSet) -> CapacityRegion:
    if channels.powers is None:
        raise ChannelError("MAC region needs per-user powers")
    return CapacityRegion(
        tuple(mac_state_region(channels.H[i], channels.powers) for i in range(channels.K)), "mac"
    )


# ---------------------------------------------------------------- weighted sum rate


def _order(nu):
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-12:
        raise ChannelError(f"priority vector must be nonnegative and sum to 1, got {nu}")
    return np.argsort(-nu, kind="stable")


def _nu_tilde(nu_sorted):
    return np.append(nu_sorted[:-1] - nu_sorted[1:], nu_sorted[-1])


def _cumulative(H_sorted, G_sorted):
    M = H_sorted.shape[2]
    X = np.eye(M, dtype=complex)
    out = []
    for Hj, Gj in zip(H_sorted, G_sorted):
        X = X + _gram(Hj, Gj)
        out.append(X)
    return out


def weighted_sum_rate(H_users, nu, gammas) -> float:
    """f = nu_J log|I + sum_j H_j^dag G_j H_j| + sum_{j<J} (nu_j - nu_{j+1}) log|I + sum_{l<=j} ...|.

    Users are taken in the given order, which must have nu nonincreasing.
    """
    nu = np.asarray(nu, dtype=float)
    if np.any(np.diff(nu) > 1e-15):
        raise ChannelError("weighted_sum_rate expects users sorted by descending priority")
    Xs = _cumulative(np.asarray(H_users, dtype=complex), gammas)
    return float(sum(w * logdet(X) for w, X in zip(_nu_tilde(nu), Xs) if w != 0))


def project_covariance(G: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto {G Hermitian PSD, tr G <= budget}."""
    G = 0.5 * (G + G.conj().T)
    if budget <= 0:
        return np.zeros_like(G)
    lam, V = np.linalg.eigh(G)
    lam = np.maximum(lam, 0.0)
    if lam.sum() > budget:
        # water level tau with sum(max(lam - tau, 0)) = budget
        srt = np.sort(lam)[::-1]
        cs = np.cumsum(srt)
        k = np.arange(1, len(srt) + 1)
        valid = srt - (cs - budget) / k > 0
        r = k[valid][-1] if valid.any() else 1
        tau = (cs[r - 1] - budget) / r
        lam = np.maximum(lam - tau, 0.0)
    return (V * lam) @ V.conj().T


@dataclass
class BoundaryPoint:
    rates: np.ndarray
    gammas: list
    residual: float
    iterations: int
    order: np.ndarray = field(repr=False)


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(f"{msg} (residual {residual:.3g})")
        self.residual = residual


def mac_boundary_point(
    channels, state: int, nu, tol: float = 1e-7, max_iter: int = 10_000, strict: bool = True, powers=None
) -> BoundaryPoint:
    """Rate vector maximizing sum nu_j c_j over the MAC region of ``state``.

    Projected gradient ascent on the covariances with Armijo backtracking from
    unit step; rates decoded in priority order (highest priority decoded last).
    """
    if isinstance(channels, ChannelSet):
        H = channels.H[state]
        powers = channels.powers if powers is None else powers
    else:
        H = np.asarray(channels, dtype=complex)
    powers = np.asarray(powers, dtype=float)
    J, N, M = H.shape
    order = _order(nu)
    nus = np.asarray(nu, dtype=float)[order]
    wt = _nu_tilde(nus)
    Hs = H[order]
    Ps = powers[order]
    G = [np.eye(N, dtype=complex) * (p / N) for p in Ps]

    def f_of(G):
        Xs = _cumulative(Hs, G)
        return sum(w * logdet(X) for w, X in zip(wt, Xs) if w != 0), Xs

    f, Xs = f_of(G)
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        Xinv = [np.linalg.inv(X) for X in Xs]
        tail = [sum(wt[j] * Xinv[j] for j in range(l, J)) for l in range(J)]
        grad = [Hs[l] @ tail[l] @ Hs[l].conj().T for l in range(J)]
        grad = [0.5 * (g + g.conj().T) for g in grad]
        residual = max(
            float(np.linalg.norm(G[l] - project_covariance(G[l] + grad[l], Ps[l]))) for l in range(J)
        )
        if residual < tol:
            break
        step = 1.0
        while True:
            Gn = [project_covariance(G[l] + step * grad[l], Ps[l]) for l in range(J)]
            fn, Xn = f_of(Gn)
            ascent = sum(float(np.real(np.vdot(grad[l], Gn[l] - G[l]))) for l in range(J))
            # slack of a few ulps so roundoff near the optimum does not stall the search
            if fn >= f + 1e-4 * ascent - 1e-14 * abs(f) or step < 1e-12:
                break
            step *= 0.5
        G, f, Xs = Gn, fn, Xn
    else:
        if strict:
            raise ConvergenceError("boundary program did not converge", residual)
    lds = [0.0] + [logdet(X) for X in Xs]
    rates_sorted = np.diff(lds)
    rates = np.empty(J)
    rates[order] = rates_sorted
    gammas = [None] * J
    for pos, j in enumerate(order):
        gammas[j] = G[pos]
    return BoundaryPoint(rates, gammas, residual, it, order)


def priority_grid(n: int, J: int = 2) -> np.ndarray:
    """Points of the priority simplex with denominators n - 1."""
    if n < 1:
        raise ValueError("grid must be nonempty")
    if n == 1:
        return np.full((1, J), 1.0 / J)
    pts = [np.array(k, dtype=float) / (n - 1) for k in itertools.product(range(n), repeat=J) if sum(k) == n - 1]
    return np.array(pts)


def pareto_envelope(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    keep = []
    for k, p in enumerate(pts):
        dominated = np.any(np.all(pts >= p - 1e-12, axis=1) & np.any(pts > p + 1e-12, axis=1))
        if not dominated:
            keep.append(k)
    env = pts[keep]
    _, idx = np.unique(np.round(env, 12), axis=0, return_index=True)
    return env[np.sort(idx)]


@dataclass
class BcCloud:
    envelope: np.ndarray
    points: np.ndarray
    splits: np.ndarray
    sum_capacity: float


def bc_region_points(channels, total_power: float, state: int, split_grid_size: int, nu_grid) -> BcCloud:
    """Dual-MAC boundary points over power splits summing to P, and their Pareto envelope."""
    H = channels.H[state] if isinstance(channels, ChannelSet) else np.asarray(channels, dtype=complex)
    J = H.shape[0]
    nus = np.atleast_2d(np.asarray(nu_grid, dtype=float))
    if split_grid_size < 1 or len(nus) == 0:
        raise ValueError("grids must be nonempty")
    if not total_power > 0:
        raise ValueError("total power must be positive")
    splits = priority_grid(split_grid_size, J) * total_power
    pts = []
    sum_cap = 0.0
    uniform = np.full(J, 1.0 / J)
    for split in splits:
        p = split
        for nu in nus:
            pts.append(mac_boundary_point(H, state, nu, powers=p, strict=False).rates)
        sum_cap = max(sum_cap, float(np.sum(mac_boundary_point(H, state, uniform, powers=p, strict=False).rates)))
    pts = np.maximum(np.array(pts), 0.0)
    return BcCloud(pareto_envelope(pts), pts, splits, sum_cap)


def bc_state_region(H_users, total_power: float, split_grid_size: int = 21, directions: int = 11) -> StateRegion:
    """Polyhedral outer description of the BC region from supporting hyperplanes.

    Each direction nu on a priority grid gives the facet nu.c <= max over the
    dual-MAC cloud of nu.c; the uniform direction is the sum facet.
    """
    H = np.asarray(H_users, dtype=complex)
    J = H.shape[0]
    grid = priority_grid(directions, J)
    cloud = bc_region_points(H, total_power, 0, split_grid_size, grid)
    facets = []
    sum_index = None
    for nu in grid:
        coef = nu / nu.max()
        bound = float(np.max(cloud.points @ coef))
        if np.allclose(coef, 1.0):
            sum_index = len(facets)
            bound = cloud.sum_capacity
        facets.append(LinearFacet(coef, bound))
    return StateRegion(tuple(facets), J, sum_index, "bc")


def boundary_continuity_probe(channels, state, nu, delta: float, n_probe: int = 8, seed: int = 0):
    """Largest displacement of c(nu') over priority vectors within delta of nu.

    Returns (displacement, displacement / delta). Only defined strictly inside
    one decoding order: nu must be strictly decreasing and positive with gaps
    larger than delta.
    """
    nu = np.asarray(nu, dtype=float)
    gaps = np.append(nu[:-1] - nu[1:], nu[-1])
    if np.any(gaps <= delta) or np.any(gaps <= 0):
        raise ChannelError("priority vector lies on (or within delta of) a priority tie")
    base = mac_boundary_point(channels, state, nu, tol=1e-10).rates
    if delta == 0:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    worst = 0.0
    J = len(nu)
    for _ in range(n_probe):
        d = rng.standard_normal(J)
        d -= d.mean()
        d *= delta / np.linalg.norm(d)
        other = mac_boundary_point(channels, state, nu + d, tol=1e-10).rates
        worst = max(worst, float(np.linalg.norm(other - base)))
    return worst, worst / delta


def bc2_example_facets(H_users, total_power: float, c, sum_capacity: float) -> np.ndarray:
    """Diagnostic evaluation of the closed-form 2-user, N = 1 BC facet functions.

    Read in the natural-log rate convention: exp(c1 + c2) against
    |I + (A1 - A2)(exp(c1) - 1)/||H_1||^2 + A2 P| (and symmetrically), with
    A_j = H_j^dag H_j; the middle facet uses the duality sum capacity. For
    scalar channels the curved pieces meet the true boundary only at its
    corners, so these values are reported, never used to build regions.
    """
    H = np.asarray(H_users, dtype=complex)
    c1, c2 = c
    A1 = H[0].conj().T @ H[0]
    A2 = H[1].conj().T @ H[1]
    I = np.eye(A1.shape[0])
    n1 = float(np.sum(np.abs(H[0]) ** 2))
    n2 = float(np.sum(np.abs(H[1]) ** 2))
    d1 = abs(np.linalg.det(I + (A1 - A2) * (np.exp(c1) - 1) / n1 + A2 * total_power))
    d3 = abs(np.linalg.det(I + (A2 - A1) * (np.exp(c2) - 1) / n2 + A1 * total_power))
    return np.array([np.exp(c1 + c2) - d1, c1 + c2 - sum_capacity, np.exp(c1 + c2) - d3])
