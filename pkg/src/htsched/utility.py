"""Separable utilities U_j(q, c) = Phi_j(q) * Psi(c)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate


class Phi:
    """Queue-side factor. Subclasses must be vectorized over numpy arrays."""

    def __call__(self, q):
        raise NotImplementedError

    def integral(self, q):
        """int_0^q Phi(u) du."""
        raise NotImplementedError

    def inverse(self, y):
        raise NotImplementedError


@dataclass(frozen=True)
class PowerPhi(Phi):
    """Phi(q) = weight * q**beta."""

    weight: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (self.weight > 0 and self.beta > 0):
            raise ValueError("PowerPhi needs weight > 0 and beta > 0")

    def __call__(self, q):
        return self.weight * np.power(q, self.beta)

    def deriv(self, q):
        return self.weight * self.beta * np.power(q, self.beta - 1.0)

    def integral(self, q):
        return self.weight * np.power(q, self.beta + 1.0) / (self.beta + 1.0)

    def inverse(self, y):
        return np.power(np.asarray(y, dtype=float) / self.weight, 1.0 / self.beta)


class CustomPhi(Phi):
    """User-supplied Phi; integral by adaptive quadrature, inverse by bisection."""

    def __init__(self, fn: Callable, name: str = "custom"):
        self.fn = fn
        self.name = name

    def __call__(self, q):
        return self.fn(q)

    def integral(self, q):
        q = np.asarray(q, dtype=float)
        flat = [integrate.quad(self.fn, 0.0, float(x), epsabs=1e-10, epsrel=1e-10)[0] for x in q.ravel()]
        return np.reshape(flat, q.shape) if q.shape else flat[0]

    def inverse(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        lo = np.zeros_like(y)
        hi = np.ones_like(y)
        while np.any(self.fn(hi) < y):
            hi = np.where(self.fn(hi) < y, 2 * hi, hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.fn(mid) < y
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 1e-12 * np.maximum(1.0, hi)):
                break
        return 0.5 * (lo + hi)


class Psi:
    """Rate-side factor shared by all users."""

    name = "psi"

    def __call__(self, c):
        raise NotImplementedError

    def d1(self, c):
        raise NotImplementedError

    def d2(self, c):
        raise NotImplementedError

    def d1_inverse(self, y):
        """Solve Psi'(c) = y for c; returns a value < 0 when y > Psi'(0)."""
        raise NotImplementedError

    # smallest admissible rate for the objective to be finite
    needs_positive = False


@dataclass(frozen=True)
class LogPsi(Psi):
    """Psi(c) = log(shift + c). shift=0 is proportional fairness, shift=1 is log(1+c)."""

    shift: float = 1.0

    @property
    def needs_positive(self):
        return self.shift <= 0

    @property
    def name(self):
        return "log" if self.shift == 0 else f"log({self.shift:g}+c)"

    def __call__(self, c):
        with np.errstate(divide="ignore"):
            return np.log(self.shift + np.asarray(c, dtype=float))

    def d1(self, c):
        with np.errstate(divide="ignore"):
            return 1.0 / (self.shift + np.asarray(c, dtype=float))

    def d2(self, c):
        with np.errstate(divide="ignore"):
            return -1.0 / (self.shift + np.asarray(c, dtype=float)) ** 2

    def d1_inverse(self, y):
        return 1.0 / np.asarray(y, dtype=float) - self.shift


@dataclass(frozen=True)
class PowerPsi(Psi):
    """Psi(c) = c**(1-alpha)/(1-alpha), alpha in (0, 1)."""

    alpha: float = 0.5
    needs_positive = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def name(self):
        return f"power({self.alpha:g})"

    def __call__(self, c):
        return np.power(np.asarray(c, dtype=float), 1 - self.alpha) / (1 - self.alpha)

    def d1(self, c):
        with np.errstate(divide="ignore"):
            return np.power(np.asarray(c, dtype=float), -self.alpha)

    def d2(self, c):
        with np.errstate(divide="ignore"):
            return -self.alpha * np.power(np.asarray(c, dtype=float), -self.alpha - 1)

    def d1_inverse(self, y):
        return np.power(np.asarray(y, dtype=float), -1.0 / self.alpha)


class LinearPsi(Psi):
    """Psi(c) = c. Not strictly concave; used for linear objectives (MaxWeight, sum rate)."""

    name = "linear"

    def __call__(self, c):
        return np.asarray(c, dtype=float)

    def d1(self, c):
        return np.ones_like(np.asarray(c, dtype=float))

    def d2(self, c):
        return np.zeros_like(np.asarray(c, dtype=float))

    def d1_inverse(self, y):
        raise NotImplementedError("linear Psi has no marginal inverse")


LINEAR = LinearPsi()


@dataclass(frozen=True)
class UtilityFamily:
    phis: tuple
    psi: Psi
    name: str = "custom"

    @property
    def J(self) -> int:
        return len(self.phis)

    @property
    def homogeneous(self) -> bool:
        """True when Phi_j(a q) = a**beta Phi_j(q) with a common beta, so the
        maximizer is invariant to scaling q."""
        betas = {p.beta for p in self.phis if isinstance(p, PowerPhi)}
        return len(betas) == 1 and all(isinstance(p, PowerPhi) for p in self.phis)

    def weights(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return np.array([float(phi(x)) for phi, x in zip(self.phis, q)])

    def value(self, q, c) -> float:
        w = self.weights(q)
        c = np.asarray(c, dtype=float)
        terms = np.where(w > 0, w * self.psi(np.where(w > 0, c, 1.0)), 0.0)
        return float(np.sum(terms))

    def marginal(self, q, c) -> np.ndarray:
        """dU_j/dc_j = Phi_j(q_j) Psi'(c_j)."""
        return self.weights(q) * self.psi.d1(c)


def linear_log(weights: Sequence[float], shift: float = 1.0) -> UtilityFamily:
    """Phi_j(q) = w_j q, Psi(c) = log(shift + c)."""
    return UtilityFamily(tuple(PowerPhi(float(w), 1.0) for w in weights), LogPsi(shift), "linear-log")


def power_family(J: int, beta: float = 1.0, alpha: float = 0.5, weights: Optional[Sequence[float]] = None) -> UtilityFamily:
    """(beta, alpha)-proportionally fair: Phi_j(q) = w_j q**beta, Psi(c) = c**(1-alpha)/(1-alpha)."""
    weights = [1.0] * J if weights is None else weights
    return UtilityFamily(tuple(PowerPhi(float(w), beta) for w in weights), PowerPsi(alpha), "power")


def from_config(cfg: dict, J: int) -> UtilityFamily:
    family = cfg.get("family", "linear-log")
    weights = cfg.get("weights") or [1.0] * J
    if len(weights) != J:
        raise ValueError(f"utility.weights has {len(weights)} entries, expected {J}")
    if family == "linear-log":
        return linear_log(weights, cfg.get("shift", 1.0))
    if family == "power":
        return power_family(J, cfg.get("beta", 1.0), cfg.get("alpha", 0.5), weights)
    raise ValueError(f"unknown utility family {family!r}")
