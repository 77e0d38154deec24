"""Convex capacity regions described by facet functions h_k(c) <= 0 on c >= 0."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

BOUNDARY_TOL = 1e-8
INT64_MAX = 2**63 - 1


class RegionError(ValueError):
    pass


class BalancedPointInfeasible(RegionError):
    pass


# ---------------------------------------------------------------- facets


class Facet:
    linear = False

    def value(self, c: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, c: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess(self, c: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class LinearFacet(Facet):
    """h(c) = coef . c - bound."""

    coef: np.ndarray
    bound: float
    linear = True

    def value(self, c):
        return float(self.coef @ c) - self.bound

    def grad(self, c):
        return self.coef

    def hess(self, c):
        n = len(self.coef)
        return np.zeros((n, n))


@dataclass(frozen=True)
class QuadraticFacet(Facet):
    """h(c) = c' A c + coef . c - bound with A symmetric PSD."""

    A: np.ndarray
    coef: np.ndarray
    bound: float

    def value(self, c):
        return float(c @ self.A @ c + self.coef @ c) - self.bound

    def grad(self, c):
        return 2 * self.A @ c + self.coef

    def hess(self, c):
        return 2 * self.A


class FunctionFacet(Facet):
    """User-supplied smooth convex facet. Hessian falls back to central differences."""

    def __init__(self, fn: Callable, grad: Callable, hess: Optional[Callable] = None):
        self._fn, self._grad, self._hess = fn, grad, hess

    def value(self, c):
        return float(self._fn(c))

    def grad(self, c):
        return np.asarray(self._grad(c), dtype=float)

    def hess(self, c):
        if self._hess is not None:
            return np.asarray(self._hess(c), dtype=float)
        n = len(c)
        eps = 1e-6
        H = np.empty((n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = eps
            H[:, k] = (self.grad(c + e) - self.grad(c - e)) / (2 * eps)
        return 0.5 * (H + H.T)


class RestrictedFacet(Facet):
    """Facet of a J-user region evaluated on the subspace where the users
    outside ``kept`` have zero rate."""

    def __init__(self, base: Facet, kept: np.ndarray, J: int):
        self.base, self.kept, self.J = base, kept, J
        self.linear = base.linear

    def _embed(self, c):
        full = np.zeros(self.J)
        full[self.kept] = c
        return full

    def value(self, c):
        return self.base.value(self._embed(c))

    def grad(self, c):
        return self.base.grad(self._embed(c))[self.kept]

    def hess(self, c):
        return self.base.hess(self._embed(c))[np.ix_(self.kept, self.kept)]


# ---------------------------------------------------------------- regions


class Membership(str, Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class StateRegion:
    """R(i) for a single environment state."""

    facets: tuple
    J: int
    sum_index: Optional[int] = None
    name: str = "custom"

    def __post_init__(self):
        if not self.facets:
            raise RegionError("a region needs at least one facet")
        if self.sum_index is not None:
            f = self.facets[self.sum_index]
            if not (isinstance(f, LinearFacet) and np.allclose(f.coef, 1.0)):
                raise RegionError("sum_index must point at the facet sum(c) - C_U")

    @property
    def B(self) -> int:
        return len(self.facets)

    @property
    def sum_bound(self) -> Optional[float]:
        return None if self.sum_index is None else self.facets[self.sum_index].bound

    def values(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        return np.array([f.value(c) for f in self.facets])

    def grads(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        return np.array([f.grad(c) for f in self.facets])

    def max_violation(self, c) -> float:
        c = np.asarray(c, dtype=float)
        return max(float(np.max(self.values(c))), float(np.max(-c)))

    def contains(self, c, tol: float = BOUNDARY_TOL) -> bool:
        return self.max_violation(c) <= tol

    def radial_limit(self, direction, tol: float = 1e-13) -> float:
        """Largest s with s * direction in the region (direction >= 0, nonzero)."""
        d = np.asarray(direction, dtype=float)
        if np.max(self.values(np.zeros(self.J))) > 0:
            return 0.0
        hi = 1.0
        while np.max(self.values(hi * d)) <= 0:
            hi *= 2.0
            if hi > 1e12:
                raise RegionError("region appears unbounded along the probe direction")
        lo = 0.0
        while hi - lo > tol * hi:
            mid = 0.5 * (lo + hi)
            if np.max(self.values(mid * d)) <= 0:
                lo = mid
            else:
                hi = mid
        return lo


@dataclass(frozen=True)
class ReducedRegion(StateRegion):
    """Region of the users in ``kept``; the others are pinned to zero rate."""

    kept: tuple = ()
    zero_set: tuple = ()
    parent_J: int = 0

    def embed(self, c) -> np.ndarray:
        full = np.zeros(self.parent_J)
        full[list(self.kept)] = c
        return full


@dataclass(frozen=True)
class CapacityRegion:
    """Per-state regions R(0), ..., R(K-1) over a common user set."""

    states: tuple
    kind: str = "custom"

    def __post_init__(self):
        Js = {s.J for s in self.states}
        if len(Js) != 1:
            raise RegionError(f"inconsistent user counts across states: {sorted(Js)}")

    @property
    def K(self) -> int:
        return len(self.states)

    @property
    def J(self) -> int:
        return self.states[0].J

    def __getitem__(self, i: int) -> StateRegion:
        return self.states[i]


def _state(region, i) -> StateRegion:
    return region if isinstance(region, StateRegion) else region[i]


# ---------------------------------------------------------------- constructors


def simplex_state(J: int, C_U: float) -> StateRegion:
    return StateRegion((LinearFacet(np.ones(J), float(C_U)),), J, 0, "simplex")


def simplex_region(J: int, sum_capacities: Sequence[float]) -> CapacityRegion:
    return CapacityRegion(tuple(simplex_state(J, C) for C in sum_capacities), "simplex")


def quadratic_state(radius: float, C_U: float, J: int = 2) -> StateRegion:
    """Disc ||c||^2 <= radius^2 cut by the sum facet sum(c) <= C_U.

    The facet is scaled so its gradient is O(1) near the balanced point.
    Requires C_U < sqrt(J) * radius for the sum facet to be active.
    """
    s = 1.0 / radius
    quad = QuadraticFacet(s * np.eye(J) / 2, np.zeros(J), radius / 2)
    return StateRegion((quad, LinearFacet(np.ones(J), float(C_U))), J, 1, "quadratic")


def scaled_state(base: StateRegion, a: float) -> StateRegion:
    """The region a * R: facets h_k(c / a)."""
    facets = []
    for f in base.facets:
        if isinstance(f, LinearFacet):
            facets.append(LinearFacet(f.coef, f.bound * a))
        else:
            facets.append(
                FunctionFacet(
                    lambda c, f=f: f.value(np.asarray(c) / a),
                    lambda c, f=f: f.grad(np.asarray(c) / a) / a,
                    lambda c, f=f: f.hess(np.asarray(c) / a) / a**2,
                )
            )
    return StateRegion(tuple(facets), base.J, base.sum_index, base.name)


# ---------------------------------------------------------------- operations


def membership(region, i: int, c, tol: float = BOUNDARY_TOL) -> Membership:
    R = _state(region, i)
    c = np.asarray(c, dtype=float)
    if c.shape != (R.J,):
        raise RegionError(f"rate vector has shape {c.shape}, expected ({R.J},)")
    hmax = float(np.max(R.values(c)))
    if np.any(c < -tol) or hmax > tol:
        return Membership.OUTSIDE
    if hmax >= -tol:
        return Membership.BOUNDARY
    return Membership.INTERIOR


def sum_capacity(region, i: int = 0) -> float:
    """max sum(c) over R(i), by the barrier solver with a linear objective."""
    from .solver import maximize_separable
    from .utility import LINEAR

    R = _state(region, i)
    sol = maximize_separable(R, np.ones(R.J), LINEAR)
    value = float(np.sum(sol.c))
    if R.sum_bound is not None and abs(value - R.sum_bound) > 1e-8:
        raise RegionError(
            f"solver sum capacity {value!r} disagrees with the sum facet constant {R.sum_bound!r}"
        )
    return value


def balanced_point(region, i: int = 0) -> np.ndarray:
    """rho(i) with equal components on the sum-capacity facet."""
    R = _state(region, i)
    C = R.sum_bound if R.sum_bound is not None else sum_capacity(R)
    rho = np.full(R.J, C / R.J)
    if membership(R, 0, rho) == Membership.OUTSIDE:
        raise BalancedPointInfeasible(
            f"balanced point infeasible in state {i}: C_U/J = {C / R.J:.6g} violates a facet by "
            f"{R.max_violation(rho):.3g}"
        )
    return rho


def balanced_points(region: CapacityRegion) -> np.ndarray:
    return np.array([balanced_point(region, i) for i in range(region.K)])


def facet_count(J: int) -> tuple[int, int]:
    """(L, B): total boundary pieces and capacity-surface facets of a J-user region."""
    if J < 1:
        raise ValueError("J must be >= 1")
    L = math.factorial(J) + sum(math.comb(J, j) * math.factorial(J - j + 1) for j in range(2, J + 1)) + J
    if L > INT64_MAX:
        raise OverflowError(f"facet count for J={J} exceeds the 64-bit integer range")
    return L, L - J


def reduce(region, i: int, zero_set) -> ReducedRegion:
    R = _state(region, i)
    if isinstance(R, ReducedRegion):
        raise RegionError("reduce a full region, not an already reduced one")
    zero = tuple(sorted(set(int(j) for j in zero_set)))
    if any(not 0 <= j < R.J for j in zero):
        raise RegionError(f"zero_set {zero} has indices outside 0..{R.J - 1}")
    if len(zero) == R.J:
        raise RegionError("zero_set covers every user: the reduced region is empty")
    kept = np.array([j for j in range(R.J) if j not in zero], dtype=int)
    if not zero:
        facets = R.facets
        sum_index = R.sum_index
    else:
        facets = tuple(
            LinearFacet(f.coef[kept], f.bound) if isinstance(f, LinearFacet) else RestrictedFacet(f, kept, R.J)
            for f in R.facets
        )
        sum_index = None
    return ReducedRegion(facets, len(kept), sum_index, R.name, tuple(int(k) for k in kept), zero, R.J)
