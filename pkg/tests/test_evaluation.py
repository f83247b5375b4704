import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inflight.evaluation import (
    ConstantPredictor, NaePredictor, NewtonPredictor, OraclePredictor, evaluate,
    generalization_matrix, goal_errors, leading_time, leading_time_csv, leading_time_from_errors,
    leading_time_summary, matrix_csv, mean_curve_csv, error_curve_csv, train_test_split,
)
from inflight.flight_sim import ObjectParams, ThrowConfig, generate_dataset, observed_states
from inflight.nae import NaeModel

DT = 1 / 120


@pytest.fixture(scope="module")
def drag_set():
    p = ObjectParams(mass=0.1, drag_coefficient=0.8, reference_area=0.012)
    return generate_dataset(ThrowConfig(duration=0.5), p, 4, seed=1, object_id="ball")


@pytest.fixture(scope="module")
def parabola_set():
    return generate_dataset(ThrowConfig(duration=0.5), ObjectParams(), 3, seed=2, object_id="parabola")


# --- error curves -------------------------------------------------------------

def test_oracle_has_zero_error_and_full_leading_time(drag_set):
    traj = drag_set[0]
    rem, err = goal_errors(OraclePredictor.of(drag_set), traj)
    assert rem[0] == len(traj) - 5 and rem[-1] == 0
    assert np.all(err == 0.0)
    assert leading_time(OraclePredictor.of(drag_set), traj) == pytest.approx((len(traj) - 5) * DT)


def test_newton_is_exact_without_drag(parabola_set):
    traj = parabola_set[0]
    _, err = goal_errors(NewtonPredictor(), traj)
    assert err.max() < 1e-9


def test_newton_degrades_with_drag(drag_set):
    rem, err = goal_errors(NewtonPredictor(), drag_set[0])
    assert err[0] > 0.05 and err[-1] < 1e-12
    assert err[0] > err[len(err) // 2]


def test_constant_far_predictor_has_zero_leading_time(drag_set):
    assert leading_time(ConstantPredictor((100.0, 0.0, 0.0)), drag_set[0]) == 0.0


def test_goal_frame_argument(drag_set):
    rem, err = goal_errors(OraclePredictor.of(drag_set), drag_set[1], goal_frame=30)
    assert rem[0] == 26 and len(rem) == 27


def test_every_predictor_returns_horizon_plus_one_samples(drag_set):
    prefix = observed_states(drag_set[0], 10)
    preds = [NewtonPredictor(), OraclePredictor.of(drag_set), ConstantPredictor((0, 0, 0)),
             NaePredictor(NaeModel(8)), NaePredictor(NaeModel(8), mode="decoded")]
    for p in preds:
        for h in (0, 1, 7):
            out = p(prefix, h)
            assert len(out) == h + 1
            assert out.t0 == pytest.approx(prefix.times[-1])


# --- leading time -------------------------------------------------------------

def test_leading_time_hand_examples():
    rem = np.array([3, 2, 1, 0])
    assert leading_time_from_errors(rem, np.array([0.02, 0.005, 0.003, 0.0]), DT) == pytest.approx(2 * DT)
    # a later excursion above the threshold resets the sustained run
    assert leading_time_from_errors(rem, np.array([0.005, 0.02, 0.001, 0.0]), DT) == pytest.approx(1 * DT)
    assert leading_time_from_errors(rem, np.array([0.0, 0.0, 0.0, 0.5]), DT) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 0.05), min_size=2, max_size=40), st.floats(1e-4, 0.05), st.floats(1e-4, 0.05))
def test_leading_time_monotone_in_precision(errs, p1, p2):
    rem = np.arange(len(errs))[::-1]
    lo, hi = sorted((p1, p2))
    e = np.array(errs)
    assert leading_time_from_errors(rem, e, DT, lo) <= leading_time_from_errors(rem, e, DT, hi)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 0.05), min_size=2, max_size=40))
def test_leading_time_bounded_by_span(errs):
    rem = np.arange(len(errs))[::-1]
    lt = leading_time_from_errors(rem, np.array(errs), DT)
    assert 0.0 <= lt <= (len(errs) - 1) * DT


def test_evaluation_aggregates(drag_set):
    ev = evaluate(NewtonPredictor(), drag_set)
    lt = ev.leading_times()
    assert lt.ids == [t.id for t in drag_set]
    assert lt.mean == pytest.approx(np.mean([leading_time(NewtonPredictor(), t) for t in drag_set]))
    e60 = ev.error_at(20)
    assert e60.shape == (4,) and np.all(np.isfinite(e60))
    assert np.isnan(ev.error_at(10_000)).all()
    rem, mean, std = ev.mean_curve()
    assert len(rem) == len(mean) == len(std) and rem[-1] == 0


def test_generalization_matrix_shape_and_diagonal(drag_set, parabola_set):
    preds = [OraclePredictor.of(drag_set + parabola_set), ConstantPredictor((50, 0, 0))]
    M = generalization_matrix(preds, [drag_set[:2], parabola_set[:2]])
    assert M.shape == (2, 2)
    assert np.all(M[1] == 0.0) and np.all(M[0] > 0.3)


# --- split --------------------------------------------------------------------

def test_split_counts_and_disjointness():
    items = list(range(1500))
    train, test = train_test_split(items, 0.9, seed=0)
    assert (len(train), len(test)) == (1350, 150)
    assert sorted(train + test) == items


def test_split_is_deterministic_and_seed_dependent():
    items = list(range(200))
    assert train_test_split(items, 0.9, 3) == train_test_split(items, 0.9, 3)
    assert train_test_split(items, 0.9, 3) != train_test_split(items, 0.9, 4)


def test_split_rejects_empty_and_bad_fraction():
    with pytest.raises(ValueError):
        train_test_split([], 0.9)
    with pytest.raises(ValueError):
        train_test_split([1, 2], 0.0)


# --- reports ------------------------------------------------------------------

def test_reports_are_parseable_and_repeatable(drag_set):
    evs = [evaluate(NewtonPredictor(), drag_set[:2]), evaluate(OraclePredictor.of(drag_set), drag_set[:2])]
    lts = {"newton": evs[0].leading_times(), "oracle": evs[1].leading_times()}
    text = leading_time_csv(lts, "config_hash=abc")
    assert text.startswith("# config_hash=abc\n")
    rows = list(csv.DictReader(io.StringIO(text.split("\n", 1)[1])))
    assert len(rows) == 4 and float(rows[0]["leading_time_s"]) == lts["newton"].values[0]
    assert text == leading_time_csv(lts, "config_hash=abc")
    summary = json.loads(leading_time_summary(lts, {"precision_m": 0.01}))
    assert summary["oracle"]["std"] == pytest.approx(0.0) and summary["precision_m"] == 0.01
    curve = error_curve_csv(evs)
    assert curve.count("\n") == 1 + sum(len(r) for ev in evs for r in ev.remaining)
    assert mean_curve_csv(evs).splitlines()[0] == "predictor,remaining_frames,mean_error_m,std_error_m"
    m = matrix_csv(np.eye(2), ["a", "b"], ["x", "y"])
    assert m.splitlines()[1] == "a,1.0,0.0"
