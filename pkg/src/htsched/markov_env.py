"""Finite-state continuous-time Markov environment.

States are 0-based throughout the package.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Named random streams. A root seed is split into independent streams by
# SeedSequence spawn keys (stream_id, *sub_ids), so adding draws to one
# stream never shifts another.
STREAMS = {
    "environment": 0,
    "arrivals": 1,
    "services": 2,
    "rdrs": 3,
    "probe": 4,
}


def stream(seed: int, name: str, *sub: int) -> np.random.Generator:
    """Independent generator for the named purpose (and optional sub-indices)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], *map(int, sub)))
    return np.random.Generator(np.random.PCG64(ss))


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class EnvGenerator:
    holding_rates: np.ndarray
    embedded_matrix: np.ndarray
    generator: np.ndarray = field(repr=False)

    @property
    def state_count(self) -> int:
        return len(self.holding_rates)

    @property
    def mean_holding_times(self) -> np.ndarray:
        return 1.0 / self.holding_rates


def build_generator(holding_rates, embedded_matrix) -> EnvGenerator:
    """Validate (gamma, Q) and form G with g_ii = -gamma_i, g_il = gamma_i q_il.

    A single-state chain is accepted with Q = [[0]]; it never jumps.
    """
    rates = np.asarray(holding_rates, dtype=float).ravel()
    Q = np.asarray(embedded_matrix, dtype=float)
    K = len(rates)
    if Q.ndim != 2 or Q.shape != (K, K):
        raise GeneratorError(
            f"dimension mismatch: {K} holding rates but embedded matrix has shape {Q.shape}"
        )
    for i in range(K):
        if not rates[i] > 0:
            raise GeneratorError(f"nonpositive rate at state {i}: {rates[i]}")
    for i in range(K):
        if Q[i, i] != 0:
            raise GeneratorError(f"nonzero diagonal at state {i}: {Q[i, i]}")
        if np.any(Q[i] < 0):
            raise GeneratorError(f"negative transition probability in row {i}")
        if K > 1 and abs(Q[i].sum() - 1.0) > 1e-12:
            raise GeneratorError(f"non-stochastic row {i}: sums to {Q[i].sum()!r}")
    G = rates[:, None] * Q
    G[np.diag_indices(K)] = -rates
    rates.setflags(write=False)
    Q = Q.copy()
    Q.setflags(write=False)
    G.setflags(write=False)
    return EnvGenerator(rates, Q, G)


@dataclass(frozen=True)
class EnvPath:
    """Right-continuous piecewise-constant path: state ``states[n]`` on
    ``[jump_times[n], jump_times[n+1])``."""

    jump_times: np.ndarray
    states: np.ndarray
    horizon: float

    def state_at(self, t):
        idx = np.searchsorted(self.jump_times, t, side="right") - 1
        return self.states[np.clip(idx, 0, len(self.states) - 1)]

    @property
    def interval_ends(self) -> np.ndarray:
        return np.append(self.jump_times[1:], self.horizon)

    def occupation(self, K: int) -> np.ndarray:
        """Time spent in each state over [0, horizon]."""
        out = np.zeros(K)
        np.add.at(out, self.states, self.interval_ends - self.jump_times)
        return out

    def integrate(self, values_by_state: np.ndarray, t) -> np.ndarray:
        """Exact integral over [0, t] of ``values_by_state[state(s)]`` (rows per state).

        ``t`` may be a scalar or a 1-d array of times; returns an array of
        shape ``t.shape + values_by_state.shape[1:]``.
        """
        vals = np.asarray(values_by_state, dtype=float)
        t = np.asarray(t, dtype=float)
        seg_len = self.interval_ends - self.jump_times
        seg_vals = vals[self.states]
        cum = np.concatenate(
            [np.zeros((1,) + vals.shape[1:]), np.cumsum(seg_len.reshape((-1,) + (1,) * (vals.ndim - 1)) * seg_vals, axis=0)]
        )
        idx = np.clip(np.searchsorted(self.jump_times, t, side="right") - 1, 0, len(self.states) - 1)
        partial = (t - self.jump_times[idx]).reshape(t.shape + (1,) * (vals.ndim - 1))
        return cum[idx] + partial * seg_vals[idx]

    def rescaled(self, factor: float) -> "EnvPath":
        """Time-compress by ``factor``: the returned path at s equals this path at factor*s."""
        return EnvPath(self.jump_times / factor, self.states, self.horizon / factor)


def sample_path(gen: EnvGenerator, horizon: float, initial_state: int = 0, seed=0) -> EnvPath:
    """Exact path on [0, horizon]: exponential holding times, jumps from rows of Q.

    ``seed`` is an int (mapped to the "environment" stream) or a Generator.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    K = gen.state_count
    if not 0 <= initial_state < K:
        raise ValueError(f"initial_state {initial_state} outside 0..{K - 1}")
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "environment")
    times = [0.0]
    states = [int(initial_state)]
    if K > 1:
        cdf = np.cumsum(gen.embedded_matrix, axis=1)
        t = 0.0
        s = int(initial_state)
        while True:
            t += rng.exponential(1.0 / gen.holding_rates[s])
            if t > horizon:
                break
            nxt = int(np.searchsorted(cdf[s], rng.random() * cdf[s, -1], side="right"))
            nxt = min(nxt, K - 1)
            if nxt == s:  # guards rounding in cdf; diagonal is zero
                continue
            s = nxt
            times.append(t)
            states.append(s)
    return EnvPath(np.array(times), np.array(states, dtype=int), float(horizon))


def stationary_distribution(gen: EnvGenerator) -> np.ndarray:
    """Solve pi G = 0, sum(pi) = 1 for an irreducible chain."""
    K = gen.state_count
    if K == 1:
        return np.ones(1)
    A = np.vstack([gen.generator.T, np.ones(K)])
    b = np.zeros(K + 1)
    b[-1] = 1.0
    if np.linalg.matrix_rank(A) < K:
        raise GeneratorError("reducible chain: stationary system is singular")
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.any(pi <= 1e-14) or np.linalg.norm(pi @ gen.generator) > 1e-10:
        raise GeneratorError("reducible chain: no strictly positive stationary vector")
    return pi


def scale_holding(gen: EnvGenerator, r: float) -> EnvGenerator:
    """Heavy-traffic time change: gamma -> gamma / r**2 with Q unchanged."""
    if not r > 0:
        raise ValueError("r must be positive")
    return build_generator(gen.holding_rates / r**2, gen.embedded_matrix)
