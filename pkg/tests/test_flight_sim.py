import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inflight.dataset_io import (
    DatasetFormatError, datasets_equal, import_csv, load_dataset, save_dataset,
)
from inflight.flight_sim import (
    ObjectParams, SimulationDiverged, ThrowConfig, Trajectory, augment, generate_dataset,
    net_acceleration, rotation_z, simulate_trajectory, specific_energy, states_from_positions,
)

DT = 1 / 120
DRAGGY = ObjectParams(mass=0.15, drag_coefficient=0.8, reference_area=0.004, air_density=1.2)
SPINNY = ObjectParams(mass=0.1, drag_coefficient=0.8, reference_area=0.012,
                      magnus_coefficient=0.1, spin_axis=(0.0, 0.6, 0.8), spin_rate=25.0)


def state(v, p=(0.0, 0.0, 0.0)):
    return np.array([*p, *v, 0, 0, 0], dtype=float)


# --- forces ----------------------------------------------------------------

def test_gravity_only_at_rest():
    assert np.allclose(net_acceleration(state((0, 0, 0)), SPINNY), [0, 0, -9.81])


def test_zero_coefficients_give_gravity():
    p = ObjectParams(drag_coefficient=0.0, magnus_coefficient=0.0, spin_rate=10.0)
    assert np.allclose(net_acceleration(state((3, -2, 7)), p), [0, 0, -9.81])


def test_drag_hand_value():
    a = net_acceleration(state((5, 0, 0)), DRAGGY)
    assert a[0] == pytest.approx(-(0.5 * 1.2 * 0.8 * 0.004 / 0.15) * 5 * 5)
    assert a[0] == pytest.approx(-0.32)


def test_magnus_is_perpendicular_to_velocity():
    p = ObjectParams(drag_coefficient=0.0, magnus_coefficient=0.2, spin_axis=(0, 0, 1), spin_rate=20.0)
    v = np.array([4.0, 1.0, 2.0])
    a_mag = net_acceleration(state(v), p) - [0, 0, -9.81]
    assert abs(a_mag @ v) < 1e-12
    assert np.linalg.norm(a_mag) > 0


def test_object_params_validation():
    with pytest.raises(ValueError):
        ObjectParams(mass=0.0)
    with pytest.raises(ValueError):
        ObjectParams(spin_axis=(1, 1, 0), spin_rate=3.0)


# --- integration -----------------------------------------------------------

def test_dragless_throw_matches_closed_form():
    traj = simulate_trajectory(state((0, 0, 5)), ObjectParams(), 1.0, DT)
    assert len(traj) == 121
    assert traj.positions[-1, 2] == pytest.approx(0.095, abs=1e-6)


def _final_position(params, dt, substeps=1):
    x0 = state((5.5, 0.3, 3.0), p=(-5, 0, 1.5))
    return simulate_trajectory(x0, params, 1.0, dt, substeps=substeps).positions[-1]


def test_rk4_fourth_order_convergence():
    ref = _final_position(SPINNY, 0.1, substeps=1000)  # h = 1e-4
    errs = [np.linalg.norm(_final_position(SPINNY, 0.1, substeps=s) - ref) for s in (1, 2, 4, 8)]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert ratios[0] == pytest.approx(16, rel=0.15)
    assert (np.log2(ratios) >= 3.8).all()


def test_drag_shortens_range():
    x0 = state((5, 0, 3))
    with_drag = simulate_trajectory(x0, DRAGGY, 1.0, DT)
    without = simulate_trajectory(x0, ObjectParams(mass=0.15), 1.0, DT)
    assert with_drag.positions[-1, 0] < without.positions[-1, 0]


def test_energy_decreases_under_drag():
    traj = simulate_trajectory(state((5.5, 0.5, 4), p=(0, 0, 1)), DRAGGY, 1.0, DT)
    E = specific_energy(traj)
    assert (np.diff(E) <= 1e-6 * np.abs(E[:-1])).all()
    assert E[-1] < E[0]


def test_divergence_is_reported():
    huge = ObjectParams(mass=1e-12, drag_coefficient=1.0, reference_area=1.0)
    with pytest.raises(SimulationDiverged, match="sample"):
        with np.errstate(all="ignore"):
            simulate_trajectory(state((50, 0, 0)), huge, 1.0, DT)


def test_samples_store_instantaneous_acceleration():
    traj = simulate_trajectory(state((5, 0, 3)), SPINNY, 0.5, DT)
    for s in traj.states[::10]:
        assert np.allclose(s[6:], net_acceleration(s, SPINNY))


# --- dataset generation ----------------------------------------------------

def test_generation_is_deterministic():
    th = ThrowConfig(spin_rate_range=(0, 30))
    a = generate_dataset(th, SPINNY, 4, seed=7)
    b = generate_dataset(th, SPINNY, 4, seed=7)
    assert all(np.array_equal(x.states, y.states) for x, y in zip(a, b))
    c = generate_dataset(th, SPINNY, 4, seed=8)
    assert not np.array_equal(a[0].states, c[0].states)


def test_generated_initial_speeds_in_range():
    ds = generate_dataset(ThrowConfig(speed_range=(5.0, 6.0), duration=0.05), ObjectParams(), 1500, seed=3)
    speeds = np.array([np.linalg.norm(t.velocities[0]) for t in ds])
    assert speeds.min() >= 5.0 and speeds.max() <= 6.0


def test_generated_sample_count():
    ds = generate_dataset(ThrowConfig(duration=1.0, dt=DT), ObjectParams(), 10, seed=0)
    assert [len(t) for t in ds] == [121] * 10


def test_throw_config_validation():
    with pytest.raises(ValueError):
        ThrowConfig(speed_range=(6.0, 5.0))
    with pytest.raises(ValueError):
        ThrowConfig(speed_range=(5.0, 25.0))
    with pytest.raises(ValueError):
        ThrowConfig(position_low=(0, 0, 2), position_high=(0, 0, 1))
    with pytest.raises(ValueError):
        generate_dataset(ThrowConfig(), ObjectParams(), 0, seed=0)


# --- augmentation ----------------------------------------------------------

@pytest.fixture(scope="module")
def throw():
    return simulate_trajectory(state((5, 0.5, 3), p=(-5, 0, 1.5)), SPINNY, 1.0, DT)


def test_augment_identity(throw):
    assert np.array_equal(augment(throw).states, throw.states)


def test_augment_quarter_turn():
    traj = Trajectory(np.tile(state((1, 0, 0)), (4, 1)), dt=DT)
    out = augment(traj, yaw=math.pi / 2)
    assert np.allclose(out.velocities, [[0, 1, 0]] * 4, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.floats(-math.pi, math.pi), st.tuples(*[st.floats(-3, 3)] * 3))
def test_augment_keeps_speed_and_vertical(yaw, shift):
    traj = simulate_trajectory(state((5, 0.5, 3)), ObjectParams(), 0.2, DT)
    out = augment(traj, shift, yaw)
    assert np.allclose(np.linalg.norm(out.velocities, axis=1), np.linalg.norm(traj.velocities, axis=1))
    assert np.allclose(out.accelerations[:, 2], -9.81)
    assert np.array_equal(out.times, traj.times)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.tuples(*[st.floats(-2, 2)] * 3), st.tuples(*[st.floats(-2, 2)] * 3))
def test_augment_composes(theta, phi, a, b):
    traj = simulate_trajectory(state((5, 0.5, 3)), SPINNY, 0.1, DT)
    twice = augment(augment(traj, a, theta), b, phi)
    composed = augment(traj, rotation_z(phi) @ np.asarray(a) + np.asarray(b), theta + phi)
    assert np.abs(twice.states - composed.states).max() < 1e-9


# --- finite differences ----------------------------------------------------

def test_differentiation_exact_on_parabola():
    t = np.arange(30) * DT
    p = np.column_stack([1 + 4 * t, 0.5 - t, 1.5 + 3 * t - 0.5 * 9.81 * t**2])
    traj = states_from_positions(p, DT)
    assert np.allclose(traj.accelerations[:, 2], -9.81, atol=1e-6)
    assert np.allclose(traj.velocities[:, 2], 3 - 9.81 * t, atol=1e-9)


def test_differentiation_of_constant_positions():
    traj = states_from_positions(np.tile([1.0, 2.0, 3.0], (8, 1)), DT)
    assert np.array_equal(traj.velocities, np.zeros((8, 3)))
    assert np.array_equal(traj.accelerations, np.zeros((8, 3)))


def test_differentiation_matches_simulator_accelerations(throw):
    derived = states_from_positions(throw.positions, DT)
    assert np.abs(derived.accelerations - throw.accelerations).max() < 0.05
    assert np.abs(derived.velocities - throw.velocities).max() < 1e-3


def test_differentiation_needs_five_samples():
    with pytest.raises(ValueError):
        states_from_positions(np.zeros((4, 3)), DT)


# --- files -----------------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    ds = generate_dataset(ThrowConfig(duration=0.2, spin_rate_range=(0, 20)), SPINNY, 3, seed=1, object_id="banana")
    path = tmp_path / "ds.jsonl"
    save_dataset(path, ds)
    assert datasets_equal(load_dataset(path), ds)


def _write(path, header, records):
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for r in records:
            fh.write(json.dumps(r) + "\n")


def test_decreasing_timestamps_rejected(tmp_path):
    rows = [[t, 0, 0, 0] for t in (0.0, 0.01, 0.02, 0.015, 0.04)]
    path = tmp_path / "bad.jsonl"
    _write(path, {"object_id": "x", "dt": 0.01, "n_trajectories": 1}, [{"id": "a", "samples": rows}])
    with pytest.raises(DatasetFormatError, match=r"bad.jsonl:2: field 't'"):
        load_dataset(path)


def test_position_only_records_are_differentiated(tmp_path):
    truth = simulate_trajectory(state((5, 0, 3)), SPINNY, 0.2, DT)
    rows = [[t, *p, None, None, None, None, None, None] for t, p in zip(truth.times, truth.positions.tolist())]
    path = tmp_path / "pos.jsonl"
    _write(path, {"object_id": "x", "dt": DT, "n_trajectories": 1}, [{"id": "a", "samples": rows}])
    (loaded,) = load_dataset(path)
    assert np.allclose(loaded.states, states_from_positions(truth.positions, DT).states)


def test_malformed_record_names_line(tmp_path):
    path = tmp_path / "m.jsonl"
    _write(path, {"object_id": "x", "dt": 0.01, "n_trajectories": 2},
           [{"id": "a", "samples": [[0, 0, 0, 0], [0.01, 0, 0, 0], [0.02, 0, 0, 0], [0.03, 0, 0, 0], [0.04, 0, 0, 0]]},
            {"id": "b"}])
    with pytest.raises(DatasetFormatError, match=r":3: field 'samples'"):
        load_dataset(path)


def test_header_count_mismatch(tmp_path):
    ds = generate_dataset(ThrowConfig(duration=0.1), ObjectParams(), 2, seed=0)
    path = tmp_path / "c.jsonl"
    save_dataset(path, ds, extra_header={"n_trajectories": 5})
    with pytest.raises(DatasetFormatError, match="n_trajectories"):
        load_dataset(path)


def test_csv_import_with_column_mapping(tmp_path):
    truth = simulate_trajectory(state((5, 0, 3)), SPINNY, 0.2, DT)
    path = tmp_path / "log.csv"
    with open(path, "w") as fh:
        fh.write("frame_ms,X,Y,Z\n")
        for t, p in zip(truth.times, truth.positions):
            fh.write(",".join(repr(float(v)) for v in (t * 1000, *p)) + "\n")
    traj = import_csv(path, columns={"t": "frame_ms", "x": "X", "y": "Y", "z": "Z"}, time_scale=1e-3)
    assert traj.dt == pytest.approx(DT)
    assert np.allclose(traj.positions, truth.positions)
    with pytest.raises(DatasetFormatError, match="column"):
        import_csv(path)
