import json
from pathlib import Path

import numpy as np
import pytest

from hlstc.lyapunov import LyapunovData
from hlstc.sim import (
    DivergenceError,
    HybridState,
    flow,
    initial_state,
    integrate_segment,
    jump,
    periodic_run,
    simulate_run,
)
from hlstc.stc import Fallback, StcConfig

from oracles import window_oracle

GOLDEN = Path(__file__).parent / "data" / "golden_ic_5_m5.json"


def test_flow_equilibrium(arm, lyap, stc_cfg):
    z = np.zeros(2)
    dx_p, dx_o = flow(HybridState(z, z, z, np.zeros(stc_cfg.n_eta)), arm)
    np.testing.assert_array_equal(dx_p, z)
    np.testing.assert_array_equal(dx_o, z)


def test_flow_examples(arm):
    x = np.array([1.0, 0.0])
    dx_p, dx_o = flow(HybridState(x, x.copy(), x.copy(), np.zeros(1)), arm)
    np.testing.assert_allclose(dx_p, [0.0, -1.0], atol=1e-15)
    np.testing.assert_allclose(dx_o, [0.0, -1.0], atol=1e-15)
    z = np.zeros(2)
    assert arm.observer_rhs(z, 0.0, 1.0).tolist() == [10.0, 10.0]


def test_jump_invariants(arm, lyap, stc_cfg):
    state = initial_state([1.0, 2.0], [0.5, 1.0], stc_cfg, lyap)
    state.t = 3.0
    state.tau = state.q = 0.4
    new, ev = jump(state, stc_cfg, lyap)
    assert new.tau == 0.0
    assert new.q == ev.interval >= stc_cfg.t_min
    np.testing.assert_array_equal(new.x_hat_o, state.x_o)
    np.testing.assert_array_equal(new.e, new.e_o)
    assert ev.t == 3.0
    assert ev.v_obs == pytest.approx(float(lyap.V(state.x_o)))
    reset, _ = jump(state, stc_cfg, lyap, reset_error=True)
    np.testing.assert_array_equal(reset.e, np.zeros(2))


def test_origin_run(arm, lyap, stc_cfg):
    state = initial_state([0.0, 0.0], [0.0, 0.0], stc_cfg, lyap)
    result = simulate_run(state, stc_cfg, lyap, arm, 5.0)
    assert np.all(result.trajectory["x_p"] == 0)
    assert np.all(result.trajectory["x_o"] == 0)
    top = max(stc_cfg.interval_bounds)
    np.testing.assert_allclose(np.diff(result.times), top, rtol=1e-12)
    assert all(ev.fallback == Fallback.NONE for ev in result.events)


@pytest.mark.parametrize("horizon, expected", [(10.0, 57), (50.0, 285)])
def test_periodic_counts(arm, horizon, expected):
    result = periodic_run([1.0, 0.0], [0.0, 0.0], 0.175, arm, horizon, output_step=None)
    assert result.count() == expected


def test_periodic_origin_stays_zero(arm, lyap):
    result = periodic_run([0.0, 0.0], [0.0, 0.0], 0.3, arm, 2.0, lyap)
    assert np.all(result.trajectory["x_p"] == 0)


def test_zoh_input_constant_between_jumps(arm, lyap, stc_cfg):
    result = simulate_run(initial_state([5, -5], [0, 0], stc_cfg, lyap), stc_cfg, lyap, arm, 3.0)
    tr = result.trajectory
    times = result.times
    seg = np.searchsorted(times, tr["t"], side="right") - 1
    for k in np.unique(seg):
        u = tr["u_hat"][seg == k]
        assert np.all(u == u[0])
    # output grid is the fixed step
    np.testing.assert_allclose(np.diff(tr["t"]), 1e-3, rtol=1e-9)
    assert tr["t"][-1] == pytest.approx(3.0)


def test_trajectory_continuous_across_jumps(arm, lyap, stc_cfg):
    result = simulate_run(initial_state([5, -5], [0, 0], stc_cfg, lyap), stc_cfg, lyap, arm, 2.0, output_step=1e-3)
    x = result.trajectory["x_p"]
    assert np.max(np.abs(np.diff(x, axis=0))) < 0.05


def test_deterministic(arm, lyap, stc_cfg):
    runs = [
        simulate_run(initial_state([3, 1], [-2, 4], stc_cfg, lyap), stc_cfg, lyap, arm, 10.0, output_step=None)
        for _ in range(2)
    ]
    assert runs[0].events == runs[1].events


def test_golden_fixture(arm, lyap, stc_cfg):
    body = json.loads(GOLDEN.read_text())
    assert stc_cfg.t_min == pytest.approx(body["t_min"], rel=1e-9)
    result = simulate_run(initial_state([5, -5], [0, 0], stc_cfg, lyap), stc_cfg, lyap, arm, 10.0, output_step=None)
    assert len(result.events) == len(body["events"])
    for ev, ref in zip(result.events, body["events"]):
        assert ev.j == ref["j"]
        assert ev.set_index == ref["set_index"]
        assert int(ev.fallback) == ref["fallback"]
        assert ev.t == pytest.approx(ref["t"], rel=1e-8, abs=1e-12)
        assert ev.interval == pytest.approx(ref["interval"], rel=1e-8)


def test_intervals_respect_t_min(arm, lyap, stc_cfg):
    result = simulate_run(initial_state([-8, 9], [4, -7], stc_cfg, lyap), stc_cfg, lyap, arm, 20.0, output_step=None)
    assert result.intervals.min() >= stc_cfg.t_min - 1e-12
    assert np.all(np.diff(result.times) > 0)


def test_window_recursion_matches_oracle(arm, lyap, stc_cfg):
    state = initial_state([5, -5], [0, 0], stc_cfg, lyap)
    eta0 = state.eta.copy()
    result = simulate_run(state, stc_cfg, lyap, arm, 20.0, output_step=None)
    for ev, ref in zip(result.events, window_oracle(result.events, eta0, stc_cfg)):
        np.testing.assert_allclose(ev.eta, ref, rtol=1e-12, atol=0)


def test_v_floor_does_not_change_early_behaviour(arm, lyap, stc_cfg):
    loose = StcConfig(
        eps_ref=stc_cfg.eps_ref, delta=stc_cfg.delta, v_max=stc_cfg.v_max, m=stc_cfg.m, sets=stc_cfg.sets, v_floor=1e-300
    )
    a = simulate_run(initial_state([5, -5], [0, 0], stc_cfg, lyap), stc_cfg, lyap, arm, 10.0, output_step=None)
    b = simulate_run(initial_state([5, -5], [0, 0], loose, lyap), loose, lyap, arm, 10.0, output_step=None)
    # the floor only matters once V(x_o) is below 1e-12, which takes longer than 10 s here
    assert [ev.t for ev in a.events[1:]] == [ev.t for ev in b.events[1:]]


def test_reset_error_flag_runs(arm, lyap, stc_cfg):
    result = simulate_run(
        initial_state([5, -5], [0, 0], stc_cfg, lyap), stc_cfg, lyap, arm, 5.0, output_step=None, reset_error=True
    )
    for ev in result.events:
        assert ev.x_hat_o == ev.x_p
    assert result.intervals.min() >= stc_cfg.t_min - 1e-12


def test_explicit_eta_shape_checked(lyap, stc_cfg):
    with pytest.raises(ValueError):
        initial_state([0, 0], [0, 0], stc_cfg, lyap, np.zeros(3))
    with pytest.raises(ValueError):
        initial_state([0, 0], [0, 0], stc_cfg, lyap, -np.ones(stc_cfg.n_eta))


def test_rejects_nonpositive_horizon(arm, lyap, stc_cfg):
    with pytest.raises(ValueError):
        simulate_run(initial_state([0, 0], [0, 0], stc_cfg, lyap), stc_cfg, lyap, arm, 0.0)
    with pytest.raises(ValueError):
        periodic_run([0, 0], [0, 0], 0.0, arm, 1.0)


class Unstable:
    """Scalar-pair toy plant with an exponentially unstable open loop."""

    n_x = 2

    def plant_rhs(self, x, u):
        return np.array([50.0 * x[0], 50.0 * x[1]])

    def observer_rhs(self, x_o, u, y):
        return np.array([50.0 * x_o[0], 50.0 * x_o[1]])

    def controller(self, x):
        return 0.0

    def output(self, x):
        return x[0]


def test_divergence_guard():
    with pytest.raises(DivergenceError):
        integrate_segment(Unstable(), np.ones(2), np.ones(2), np.ones(2), 1.0)
    with pytest.raises(DivergenceError):
        periodic_run([1.0, 1.0], [1.0, 1.0], 0.2, Unstable(), 2.0, output_step=None)


def test_state_feedback_mode_uses_plant_value(arm, lyap, stc_cfg):
    cfg = StcConfig(eps_ref=stc_cfg.eps_ref, delta=stc_cfg.delta, v_max=1.0, m=stc_cfg.m, sets=stc_cfg.sets, mode="state")
    state = initial_state([5, -5], [0, 0], cfg, lyap)
    assert state.eta[0] == pytest.approx(float(lyap.V(np.array([5.0, -5.0]))))
    _, ev = jump(state, cfg, lyap)
    assert ev.v_obs == pytest.approx(float(lyap.V(np.array([5.0, -5.0]))))
    assert isinstance(lyap, LyapunovData)
