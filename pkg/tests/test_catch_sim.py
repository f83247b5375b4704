import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inflight.catch_sim import (
    ArmState, CatchResult, UndefinedRate, Workspace, catch_report, interception_point,
    simulate_catch, success_rate, velocity_command,
)
from inflight.evaluation import ConstantPredictor, NewtonPredictor, OraclePredictor
from inflight.flight_sim import ObjectParams, ThrowConfig, Trajectory, generate_dataset, simulate_trajectory

DT = 1 / 120


def line(start, velocity, n, tid="line"):
    t = np.arange(n)[:, None] * DT
    s = np.zeros((n, 9))
    s[:, :3] = np.asarray(start) + t * np.asarray(velocity)
    s[:, 3:6] = velocity
    return Trajectory(s, dt=DT, id=tid)


# --- control law --------------------------------------------------------------

def test_speed_zero_at_target():
    speed, direction = velocity_command([1, 2, 3], [1, 2, 3])
    assert speed == 0.0 and np.all(direction == 0)


def test_speed_saturates_at_vmax():
    speed, _ = velocity_command([0, 0, 0], [100, 0, 0])
    assert abs(speed - 1.85) < 1e-9


def test_speed_at_kd_one_point_two():
    # |p_cur - p_tar|^2 = 0.1 with k = 12
    speed, direction = velocity_command([0, 0, 0], [math.sqrt(0.1), 0, 0], k=12, v_max=1.85)
    assert abs(speed - math.tanh(0.6) * 1.85) < 1e-9
    assert speed == pytest.approx(0.9936, abs=1e-4)
    assert np.allclose(direction, [1, 0, 0])


def test_euclidean_distance_mode():
    speed, _ = velocity_command([0, 0, 0], [0, 0.1, 0], k=12, distance_mode="euclidean")
    assert abs(speed - math.tanh(0.6) * 1.85) < 1e-9


def test_closed_form_matches_exponential_form():
    for d2 in (1e-4, 0.03, 0.5, 2.0):
        expect = 1.85 * (1 - math.exp(-12 * d2)) / (1 + math.exp(-12 * d2))
        assert velocity_command([0, 0, 0], [math.sqrt(d2), 0, 0])[0] == pytest.approx(expect, rel=1e-13)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 3.0), st.floats(1e-3, 3.0))
def test_speed_increasing_and_bounded(a, b):
    lo, hi = sorted((a, b))
    s_lo = velocity_command([0, 0, 0], [lo, 0, 0])[0]
    s_hi = velocity_command([0, 0, 0], [hi, 0, 0])[0]
    assert 0 < s_lo <= s_hi <= 1.85
    if hi - lo > 1e-6 and s_hi < 1.85:
        assert s_lo < s_hi


@pytest.mark.parametrize("kw", [dict(k=0), dict(v_max=-1), dict(distance_mode="manhattan")])
def test_control_law_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        velocity_command([0, 0, 0], [1, 0, 0], **kw)


# --- workspace and interception ----------------------------------------------

def test_workspace_validation():
    with pytest.raises(ValueError):
        Workspace(inner_radius=1.0, outer_radius=0.5)


def test_straight_line_enters_on_outer_sphere():
    ws = Workspace(center=(0, 0, 0), inner_radius=0.2, outer_radius=0.85)
    traj = line([-3, 0.1, 0.3], [3.0, 0, 0], 120)
    hit = interception_point(traj, ws)
    assert abs(np.linalg.norm(hit.position) - 0.85) < 1e-6
    # the line y=0.1, z=0.3 meets the sphere at x = -sqrt(0.85^2 - 0.1)
    assert hit.position[0] == pytest.approx(-math.sqrt(0.85**2 - 0.1), abs=1e-9)
    assert hit.time == pytest.approx((hit.position[0] + 3) / 3.0, abs=1e-9)


def test_trajectory_outside_has_no_interception():
    ws = Workspace()
    assert interception_point(line([-3, 5, 0], [3.0, 0, 0], 120), ws) is None


def test_start_inside_returns_first_sample():
    ws = Workspace()
    hit = interception_point(line([0.5, 0, 0], [1.0, 0, 0], 10), ws)
    assert hit.index == 0 and np.allclose(hit.position, [0.5, 0, 0])


def test_leaving_the_hollow_core_enters_on_inner_sphere():
    ws = Workspace(inner_radius=0.3, outer_radius=0.85)
    hit = interception_point(line([0, 0, 0], [0, 2.0, 0], 30), ws)
    assert np.linalg.norm(hit.position) == pytest.approx(0.3, abs=1e-9)


def test_height_limit_crossing():
    ws = Workspace(inner_radius=0.1, outer_radius=2.0, z_max=0.5)
    hit = interception_point(line([0.5, 0, 1.2], [0, 0, -2.0], 60), ws)
    assert hit.position[2] == pytest.approx(0.5, abs=1e-9)


# --- closed-loop catching -----------------------------------------------------

@pytest.fixture(scope="module")
def throws():
    p = ObjectParams(mass=0.1, drag_coefficient=0.8, reference_area=0.012)
    throw = ThrowConfig(position_low=(-5, -0.1, 1.5), position_high=(-4.8, 0.1, 1.7),
                        elevation_range=(35, 45))
    return generate_dataset(throw, p, 6, seed=4)


WS = Workspace(center=(-1.2, 0.0, 0.4), inner_radius=0.2, outer_radius=0.85)
ARM = ArmState(position=(-1.6, 0.0, 1.0))


def test_oracle_slow_throw_within_reach_is_caught_exactly():
    ws = Workspace(center=(0, 0, 0), inner_radius=0.1, outer_radius=0.6)
    traj = simulate_trajectory(np.array([-1.2, 0, 0.2, 1.5, 0, 2.0, 0, 0, 0]), ObjectParams(), 0.8, DT)
    entry = interception_point(traj, ws)
    arm = ArmState(position=tuple(entry.position))
    res = simulate_catch(OraclePredictor.of([traj]), traj, ws, arm)
    assert res.feasible and res.success
    assert res.miss_distance < 1e-3
    assert res.interception_time == pytest.approx(entry.time)


def test_constant_far_predictor_fails(throws):
    res = simulate_catch(ConstantPredictor((10.0, 10.0, 10.0)), throws[0], WS, ARM)
    assert res.feasible and not res.success


def test_throw_missing_workspace_is_infeasible():
    traj = line([-3, 5, 0], [3.0, 0, 0], 120)
    res = simulate_catch(NewtonPredictor(), traj, Workspace(), ArmState(position=(0.5, 0, 0)))
    assert not res.feasible and not res.success and res.miss_distance == math.inf


def test_oracle_catches_the_desk_throws(throws):
    rr = success_rate(OraclePredictor.of(throws), throws, WS, ARM)
    assert rr.rate == 1.0 and rr.n_excluded == 0


@pytest.mark.parametrize("predictor", ["oracle", "newton"])
def test_effector_never_exceeds_vmax(throws, predictor):
    pred = OraclePredictor.of(throws) if predictor == "oracle" else NewtonPredictor()
    for arm in (ARM, ArmState(position=(0.0, 1.0, 0.0), v_max=0.7, k=40.0)):
        for t in throws[:3]:
            res = simulate_catch(pred, t, WS, arm)
            steps = np.linalg.norm(np.diff(res.effector_path, axis=0), axis=1) / t.dt
            assert steps.max() <= arm.v_max * (1 + 1e-12)
            assert res.max_effector_speed <= arm.v_max * (1 + 1e-12)
            assert res.miss_distance >= 0


def test_oracle_success_monotone_in_basket_radius(throws):
    oracle = OraclePredictor.of(throws)
    far_arm = ArmState(position=(-0.6, 0.5, 0.2))
    for t in throws[:3]:
        flags = [simulate_catch(oracle, t, WS, far_arm, basket_radius=r).success for r in (0.02, 0.1, 0.3, 1.0)]
        assert flags == sorted(flags)


def test_catch_is_deterministic(throws):
    a = simulate_catch(NewtonPredictor(), throws[1], WS, ARM)
    b = simulate_catch(NewtonPredictor(), throws[1], WS, ARM)
    assert a.record() == b.record()


# --- success rate and report --------------------------------------------------

def fake(feasible, success):
    return CatchResult("x", feasible, success, 0.05 if success else 0.5, 0.8, 0)


def test_rate_counts_only_feasible_throws():
    results = [fake(True, i < 20) for i in range(25)] + [fake(False, False)] * 5
    rr = success_rate(None, [], WS, ARM, results=results)
    assert rr.n_feasible == 25 and rr.n_excluded == 5
    assert rr.rate == pytest.approx(20 / 25)


def test_all_success_and_all_infeasible():
    assert success_rate(None, [], WS, ARM, results=[fake(True, True)] * 3).rate == 1.0
    with pytest.raises(UndefinedRate):
        success_rate(None, [], WS, ARM, results=[fake(False, False)] * 3)


def test_report_is_json_lines_with_summary(throws):
    rr = success_rate(NewtonPredictor(), throws[:2], WS, ARM)
    lines = catch_report(rr, "newton", {"config_hash": "abc"}).splitlines()
    records = [json.loads(x) for x in lines]
    assert [r["type"] for r in records] == ["catch", "catch", "summary"]
    assert records[-1]["success_rate"] == rr.rate and records[-1]["config_hash"] == "abc"
    assert set(records[0]) >= {"success", "miss_distance", "interception_time", "replans"}


def test_arm_validation():
    with pytest.raises(ValueError):
        ArmState(position=(0, 0, 0), v_max=0)
