import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htsched.capacity import Membership, membership
from htsched.mimo import (
    ChannelError,
    ChannelSet,
    bc2_example_facets,
    bc_region_points,
    bc_state_region,
    boundary_continuity_probe,
    logdet,
    mac_boundary_point,
    mac_state_region,
    priority_grid,
    project_covariance,
    weighted_sum_rate,
)


def random_channels(rng, J=2, N=1, M=2):
    return (rng.standard_normal((J, N, M)) + 1j * rng.standard_normal((J, N, M))) / math.sqrt(2)


def random_covariance(rng, N, budget):
    A = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    G = A @ A.conj().T
    return G * (budget * rng.uniform(0.1, 1.0) / np.trace(G).real)


# ---------------------------------------------------------------- weighted sum rate


def test_weighted_sum_rate_top_priority_only():
    rng = np.random.default_rng(1)
    H = random_channels(rng, 2, 2, 3)
    G = [random_covariance(rng, 2, 1.0) for _ in range(2)]
    X1 = np.eye(3) + H[0].conj().T @ G[0] @ H[0]
    assert weighted_sum_rate(H, [1.0, 0.0], G) == pytest.approx(logdet(X1), abs=1e-12)


def test_weighted_sum_rate_zero_covariance():
    H = random_channels(np.random.default_rng(2), 2, 2, 2)
    assert weighted_sum_rate(H, [0.7, 0.3], [np.zeros((2, 2))] * 2) == 0.0


def test_weighted_sum_rate_equal_priorities_is_half_sum_rate():
    rng = np.random.default_rng(3)
    H = random_channels(rng, 2, 2, 2)
    G = [random_covariance(rng, 2, 2.0) for _ in range(2)]
    X = np.eye(2) + sum(H[j].conj().T @ G[j] @ H[j] for j in range(2))
    assert weighted_sum_rate(H, [0.5, 0.5], G) == pytest.approx(0.5 * logdet(X), abs=1e-12)


def test_weighted_sum_rate_rejects_unsorted_priorities():
    H = random_channels(np.random.default_rng(4))
    with pytest.raises(ChannelError):
        weighted_sum_rate(H, [0.3, 0.7], [np.eye(1)] * 2)


def test_weighted_sum_rate_chord_concavity():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        J, N, M = 2, int(rng.integers(1, 3)), int(rng.integers(1, 4))
        H = random_channels(rng, J, N, M)
        nu = np.sort(rng.dirichlet(np.ones(J)))[::-1]
        Ga = [random_covariance(rng, N, 1.0) for _ in range(J)]
        Gb = [random_covariance(rng, N, 1.0) for _ in range(J)]
        lam = rng.random()
        mix = [lam * a + (1 - lam) * b for a, b in zip(Ga, Gb)]
        gap = weighted_sum_rate(H, nu, mix) - lam * weighted_sum_rate(H, nu, Ga) - (1 - lam) * weighted_sum_rate(H, nu, Gb)
        worst = min(worst, gap)
    assert worst >= -1e-9


# ---------------------------------------------------------------- covariance projection


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.floats(0.01, 10.0), st.integers(0, 2**31 - 1))
def test_projection_is_feasible_and_idempotent(n, budget, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    P = project_covariance(3 * A, budget)
    assert np.allclose(P, P.conj().T)
    assert np.linalg.eigvalsh(P).min() >= -1e-10
    assert np.trace(P).real <= budget + 1e-9
    np.testing.assert_allclose(project_covariance(P, budget), P, atol=1e-9)


def test_projection_keeps_interior_points():
    G = np.diag([0.2, 0.3]).astype(complex)
    np.testing.assert_allclose(project_covariance(G, 1.0), G)


def test_projection_zero_budget():
    assert np.all(project_covariance(np.eye(2), 0.0) == 0)


# ---------------------------------------------------------------- boundary points


def test_single_user_scalar_capacity():
    bp = mac_boundary_point(ChannelSet.scalar([[1.0]], powers=[1.0]), 0, [1.0])
    assert bp.rates[0] == pytest.approx(math.log(2), abs=1e-10)
    assert bp.gammas[0][0, 0].real == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("seed", range(6))
def test_two_user_boundary_point_on_polymatroid(seed):
    rng = np.random.default_rng(seed)
    H = random_channels(rng, 2, 1, 2)
    powers = rng.uniform(0.5, 2.0, 2)
    R = mac_state_region(H, powers)
    for nu in priority_grid(21):
        bp = mac_boundary_point(H, 0, nu, powers=powers)
        vals = np.array([f.value(bp.rates) for f in R.facets])
        assert vals.max() <= 1e-6
        assert np.min(np.abs(vals)) <= 1e-6


def test_top_priority_user_gets_single_user_maximum():
    rng = np.random.default_rng(11)
    H = random_channels(rng, 2, 1, 2)
    powers = np.array([1.0, 1.5])
    bp = mac_boundary_point(H, 0, [1.0, 0.0], powers=powers)
    single = logdet(np.eye(2) + powers[0] * H[0].conj().T @ H[0])
    assert bp.rates[0] == pytest.approx(single, abs=1e-6)


def test_rates_telescope_to_sum_log_det():
    rng = np.random.default_rng(12)
    H = random_channels(rng, 3, 2, 2)
    bp = mac_boundary_point(H, 0, [0.5, 0.3, 0.2], powers=[1.0, 1.0, 1.0])
    X = np.eye(2) + sum(H[j].conj().T @ bp.gammas[j] @ H[j] for j in range(3))
    assert bp.rates.sum() == pytest.approx(logdet(X), abs=1e-12)


def test_boundary_point_gammas_feasible():
    rng = np.random.default_rng(13)
    H = random_channels(rng, 2, 2, 2)
    bp = mac_boundary_point(H, 0, [0.6, 0.4], powers=[1.0, 2.0])
    for G, p in zip(bp.gammas, [1.0, 2.0]):
        assert np.linalg.eigvalsh(G).min() >= -1e-10
        assert np.trace(G).real <= p + 1e-9


def test_invalid_priority_rejected():
    with pytest.raises(ChannelError):
        mac_boundary_point(ChannelSet.scalar([[1.0, 1.0]], powers=[1, 1]), 0, [0.8, 0.8])


# ---------------------------------------------------------------- broadcast region


def test_bc_single_user_interval():
    H = np.array([[[0.8 + 0.6j]]])
    cloud = bc_region_points(H, 2.0, 0, 5, priority_grid(1, 1))
    np.testing.assert_allclose(cloud.envelope.max(), math.log(1 + 2.0), atol=1e-9)


def test_bc_symmetric_envelope():
    cloud = bc_region_points(ChannelSet.scalar([[1.0, 1.0]]), 1.0, 0, 11, priority_grid(11))
    env = cloud.envelope
    for p in env[:, ::-1]:
        assert np.min(np.linalg.norm(env - p, axis=1)) < 0.05


def test_bc_degraded_scalar_oracle():
    """Scalar degraded BC: stronger user coded last gets log(1 + a1 p)."""
    g = np.array([1.0, 0.6])
    a = g**2
    P = 1.0
    cloud = bc_region_points(ChannelSet.scalar([g]), P, 0, 41, priority_grid(21))
    for p in np.linspace(0, P, 9):
        exact = np.array([math.log(1 + a[0] * p), math.log((1 + a[1] * P) / (1 + a[1] * p))])
        # the exact boundary point is not beaten by the cloud along its normal
        normal = np.array([a[1] / (1 + a[1] * p), a[0] / (1 + a[0] * p)])
        assert np.max(cloud.points @ normal) <= normal @ exact + 1e-6
        # and the cloud gets close to it
        assert np.min(np.linalg.norm(cloud.points - exact, axis=1)) < 0.05


def test_bc_envelope_dominates_each_dual_mac():
    H = ChannelSet.scalar([[1.0, 0.5 + 0.5j]])
    cloud = bc_region_points(H, 1.0, 0, 6, priority_grid(6))
    for c in cloud.points:
        assert np.any(np.all(cloud.envelope >= c - 1e-9, axis=1))


def test_bc_state_region_contains_cloud():
    H = ChannelSet.scalar([[1.0, 0.7]]).H[0]
    R = bc_state_region(H, 1.0, 11, 7)
    cloud = bc_region_points(H, 1.0, 0, 11, priority_grid(7))
    for c in cloud.envelope:
        assert membership(R, 0, c) != Membership.OUTSIDE


@pytest.mark.parametrize("gains", [[1.0, 0.6], [0.9, 0.9], [1.2 + 0.3j, 0.4 - 0.5j]])
def test_bc_example_facets_min_below_tolerance(gains):
    H = ChannelSet.scalar([gains])
    cloud = bc_region_points(H, 1.0, 0, 21, priority_grid(11))
    for c in cloud.envelope:
        assert np.min(bc2_example_facets(H.H[0], 1.0, c, cloud.sum_capacity)) <= 1e-3


def test_bc_example_curved_facets_meet_corners():
    H = ChannelSet.scalar([[1.0, 0.6]])
    a = np.array([1.0, 0.36])
    for c in ([0.0, math.log(1 + a[1])], [math.log(1 + a[0]), 0.0]):
        h = bc2_example_facets(H.H[0], 1.0, c, math.log(1 + a[0]))
        assert abs(h[0]) < 1e-12 or abs(h[2]) < 1e-12


def test_bc_requires_positive_power():
    with pytest.raises(ValueError):
        bc_region_points(ChannelSet.scalar([[1.0, 1.0]]), 0.0, 0, 3, priority_grid(3))


# ---------------------------------------------------------------- continuity probe


def test_probe_zero_radius():
    ch = ChannelSet.scalar([[1.0, 1.0]], powers=[1.0, 1.0])
    assert boundary_continuity_probe(ch, 0, [0.6, 0.4], 0.0) == (0.0, 0.0)


def test_probe_symmetric_small_radius():
    ch = ChannelSet.scalar([[1.0, 1.0]], powers=[1.0, 1.0])
    disp, _ = boundary_continuity_probe(ch, 0, [0.6, 0.4], 1e-3)
    assert disp <= 0.1


def test_probe_rejects_priority_tie():
    ch = ChannelSet.scalar([[1.0, 1.0]], powers=[1.0, 1.0])
    with pytest.raises(ChannelError):
        boundary_continuity_probe(ch, 0, [0.5, 0.5], 1e-3)
