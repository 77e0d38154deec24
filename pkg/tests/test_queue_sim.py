import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htsched.capacity import Membership, balanced_points, membership, simplex_region
from htsched.markov_env import build_generator, sample_path
from htsched.queue_sim import (
    FixedRatePolicy,
    MaxWeightPolicy,
    Policy,
    SimulationError,
    StaticRhoPolicy,
    TrafficSpec,
    UtilityMaxPolicy,
    make_policy,
    maxweight_rate,
    simulate,
    time_average,
    unused_capacity,
)

ONE_STATE = build_generator([1.0], [[0.0]])


def nominal_traffic(region, mu, load=0.9):
    lam = load * balanced_points(region) * np.asarray(mu)
    return TrafficSpec(lam, np.ones_like(lam), mu, np.ones(len(mu)))


def test_traffic_validation():
    with pytest.raises(ValueError):
        TrafficSpec([[1.0, 1.0]], [[1.0]], [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        TrafficSpec([[1.0]], [[0.0]], [1.0], [1.0])
    tr = TrafficSpec([[0.0, 1.0]], [[1.0, 1.0]], [1.0, 2.0], [1.0, 1.0])
    assert (tr.K, tr.J) == (1, 2)


def test_maxweight_vertex_on_simplex():
    R = simplex_region(2, [2.0])
    np.testing.assert_allclose(maxweight_rate(R, 0, [3, 1], [1, 1]), [2.0, 0.0], atol=1e-9)
    np.testing.assert_array_equal(maxweight_rate(R, 0, [0, 0], [1, 1]), [0, 0])


def test_maxweight_symmetric_curved_region(sym_mac):
    c = maxweight_rate(sym_mac, 0, [2, 2], [1, 1])
    # any point of the sum facet is optimal; the solver must stay on it
    assert c.sum() == pytest.approx(sym_mac[0].facets[sym_mac[0].sum_index].bound, abs=1e-7)


def test_policies_zero_empty_queues(sym_mac, linlog2):
    for pol in (UtilityMaxPolicy(sym_mac, linlog2), MaxWeightPolicy(sym_mac, [1, 1]), StaticRhoPolicy(sym_mac)):
        c = pol([0, 3], 1)
        assert c[0] == 0
        assert membership(sym_mac, 1, c) != Membership.OUTSIDE


def test_policy_cache_uses_rays(sym_mac, linlog2):
    pol = UtilityMaxPolicy(sym_mac, linlog2)
    a = pol([2, 4], 0)
    b = pol([3, 6], 0)
    assert a is b


def test_infeasible_policy_rejected():
    R = simplex_region(2, [1.0])
    with pytest.raises(SimulationError):
        FixedRatePolicy(R, [[1.0, 1.0]])([1, 1], 0)


def test_make_policy_names(sym_mac, linlog2):
    assert make_policy("utility-max", sym_mac, linlog2).name == "utility-max"
    assert make_policy("maxweight", sym_mac, mu=[1, 1]).name == "maxweight"
    assert make_policy("static-rho", sym_mac).name == "static-rho"
    with pytest.raises(ValueError):
        make_policy("round-robin", sym_mac)


def test_deterministic_trace_departure():
    R = simplex_region(1, [1.0])
    tr = TrafficSpec([[1.0]], [[1.0]], [0.5], [1.0])
    traj = simulate(
        tr, R, FixedRatePolicy(R, [[1.0]]), sample_path(ONE_STATE, 10.0), 10.0, 0.5,
        log_events=True, arrivals=[[1.0]], lengths=[[2.0]],
    )
    assert traj.events == [(1.0, "arrival", 0, 0), (3.0, "departure", 0, 0)]
    np.testing.assert_allclose(traj.T[-1], [2.0])
    assert traj.Q[traj.times < 1.0].sum() == 0
    assert np.all(traj.Q[(traj.times >= 1.0) & (traj.times < 3.0)] == 1)
    assert traj.Q[traj.times >= 3.0].sum() == 0


def test_zero_arrivals_empty_system(two_state, sym_mac):
    tr = TrafficSpec(np.zeros((2, 2)), np.ones((2, 2)), [1, 1], [1, 1])
    env = sample_path(two_state, 50.0, seed=3)
    traj = simulate(tr, sym_mac, StaticRhoPolicy(sym_mac), env, 50.0, 0.5)
    assert traj.Q.sum() == 0 and traj.W.sum() == 0
    expected = env.integrate(balanced_points(sym_mac).sum(axis=1), traj.times)
    np.testing.assert_allclose(traj.Y, expected, atol=1e-12)


def test_empty_system_constant_regime():
    R = simplex_region(2, [1.5])
    tr = TrafficSpec(np.zeros((1, 2)), np.ones((1, 2)), [1, 1], [1, 1])
    traj = simulate(tr, R, StaticRhoPolicy(R), sample_path(ONE_STATE, 10.0), 10.0, 1.0)
    np.testing.assert_allclose(traj.Y, 1.5 * traj.times)


def test_saturating_policy_keeps_y_flat_while_busy():
    R = simplex_region(1, [1.0])
    tr = TrafficSpec([[0.9]], [[1.0]], [1.0], [1.0])
    traj = simulate(tr, R, StaticRhoPolicy(R), sample_path(ONE_STATE, 500.0), 500.0, 0.25, seed=4)
    busy = (traj.Q[:-1, 0] > 0) & (traj.Q[1:, 0] > 0)
    # a departure and an arrival may both fall inside one grid cell, so test
    # cells where the queue stays busy at both ends and Y is flat to roundoff
    dY = np.diff(traj.Y)
    assert np.median(np.abs(dY[busy])) < 1e-9


@pytest.mark.parametrize("policy", ["utility-max", "maxweight", "static-rho"])
def test_trajectory_invariants(policy, sym_mac, two_state, linlog2):
    tr = nominal_traffic(sym_mac, [1.0, 1.0])
    traj = simulate(
        tr, sym_mac, make_policy(policy, sym_mac, linlog2, [1, 1]), sample_path(two_state, 300.0, seed=1),
        300.0, 0.5, seed=2,
    )
    assert np.all(traj.Q >= 0)
    assert np.all(np.diff(traj.Y) >= -1e-9)
    assert np.all(np.diff(traj.T, axis=0) >= -1e-12)
    np.testing.assert_array_equal(traj.T[0], 0)
    np.testing.assert_allclose(traj.W, traj.Q @ (1 / tr.mu), atol=1e-12)
    np.testing.assert_array_equal(traj.arrivals - traj.departures, traj.Q[-1])


def test_work_accounting_matches_event_log(sym_mac, two_state, linlog2):
    tr = nominal_traffic(sym_mac, [1.0, 1.0])
    env = sample_path(two_state, 100.0, seed=5)
    traj = simulate(tr, sym_mac, UtilityMaxPolicy(sym_mac, linlog2), env, 100.0, 0.5, seed=6, log_events=True)
    q = np.zeros(2, dtype=int)
    for _, kind, who, _ in traj.events:
        if kind == "arrival":
            q[who] += 1
        elif kind == "departure":
            assert q[who] > 0
            q[who] -= 1
    np.testing.assert_array_equal(q, traj.Q[-1])
    np.testing.assert_array_equal(traj.arrivals - traj.departures, q)


def test_rate_conservation_between_events():
    R = simplex_region(1, [1.0])
    tr = TrafficSpec([[1.0]], [[1.0]], [0.5], [1.0])
    traj = simulate(
        tr, R, FixedRatePolicy(R, [[0.8]]), sample_path(ONE_STATE, 10.0), 10.0, 0.1,
        arrivals=[[1.0]], lengths=[[4.0]],
    )
    inside = (traj.times > 1.0) & (traj.times < 6.0)
    np.testing.assert_allclose(np.diff(traj.T[inside, 0]), 0.8 * 0.1, atol=1e-12)


def test_reproducible_event_log(sym_mac, two_state, linlog2, tmp_path):
    tr = nominal_traffic(sym_mac, [1.0, 1.0])
    env = sample_path(two_state, 80.0, seed=7)
    runs = [
        simulate(tr, sym_mac, UtilityMaxPolicy(sym_mac, linlog2), env, 80.0, 1.0, seed=8, log_events=True)
        for _ in range(2)
    ]
    assert runs[0].events == runs[1].events
    for k, r in enumerate(runs):
        r.to_csv(tmp_path / f"t{k}.csv")
        r.events_to_jsonl(tmp_path / f"e{k}.jsonl")
    assert (tmp_path / "t0.csv").read_bytes() == (tmp_path / "t1.csv").read_bytes()
    first = json.loads((tmp_path / "e0.jsonl").read_text().splitlines()[0])
    assert set(first) == {"time", "type", "user", "state"}


def test_csv_columns(sym_mac, two_state, tmp_path):
    tr = nominal_traffic(sym_mac, [1.0, 1.0])
    traj = simulate(tr, sym_mac, StaticRhoPolicy(sym_mac), sample_path(two_state, 5.0), 5.0, 1.0)
    traj.to_csv(tmp_path / "t.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "time,state,Q_1,Q_2,W,Y,T_1,T_2"


def test_simulate_rejects_bad_arguments(sym_mac, two_state):
    tr = nominal_traffic(sym_mac, [1.0, 1.0])
    env = sample_path(two_state, 5.0)
    with pytest.raises(ValueError):
        simulate(tr, sym_mac, StaticRhoPolicy(sym_mac), env, 5.0, 0.0)
    with pytest.raises(ValueError):
        simulate(tr, sym_mac, StaticRhoPolicy(sym_mac), env, 6.0, 1.0)


def test_mm1_short_run_near_closed_form():
    R = simplex_region(1, [1.0])
    tr = TrafficSpec([[0.5]], [[1.0]], [1.0], [1.0])
    traj = simulate(tr, R, FixedRatePolicy(R, [[1.0]]), sample_path(ONE_STATE, 1e5), 1e5, 10.0, seed=11)
    mean, se = time_average(traj)
    assert abs(mean[0] - 1.0) < 4 * se[0]


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 4.0), st.floats(0.2, 4.0), st.integers(0, 1000))
def test_gamma_scv_does_not_break_invariants(a2, b2, seed):
    R = simplex_region(2, [1.0])
    tr = TrafficSpec([[0.4, 0.4]], [[a2, a2]], [1.0, 1.0], [b2, b2])
    traj = simulate(tr, R, StaticRhoPolicy(R), sample_path(ONE_STATE, 50.0), 50.0, 0.5, seed=seed)
    assert np.all(traj.Q >= 0)
    assert np.all(np.diff(traj.Y) >= -1e-9)


def test_unused_capacity_nondecreasing(sym_mac, two_state, linlog2):
    tr = nominal_traffic(sym_mac, [1.0, 1.0], load=1.0)
    traj = simulate(tr, sym_mac, UtilityMaxPolicy(sym_mac, linlog2), sample_path(two_state, 200.0, seed=9), 200.0, 0.5, seed=9)
    np.testing.assert_allclose(unused_capacity(traj, sym_mac), traj.Y)
    assert np.all(np.diff(traj.Y) >= -1e-9)


def test_base_policy_is_abstract(sym_mac):
    with pytest.raises(NotImplementedError):
        Policy(sym_mac)([1, 1], 0)
