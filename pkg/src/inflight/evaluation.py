"""Forecast metrics: accumulated goal error, Leading Time and cross-object generalization.

Metrics only talk to predictors through :class:`Predictor`: given the states
observed so far and a number of frames, return a trajectory whose first
sample is the current frame and whose last sample is ``horizon`` frames
ahead.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Protocol, Sequence

import numpy as np
import torch

from .flight_sim import Trajectory, observed_states
from .nae import NaeModel, run_sequence
from .naedf import NaedfConfig, forecast
from .statespace import ACC, GRAVITY, as_tensor, make_transition_matrix, newton_rollout

MIN_PREFIX = 5


class Predictor(Protocol):
    name: str

    def __call__(self, prefix: Trajectory, horizon: int) -> Trajectory: ...


def _hold(prefix: Trajectory) -> Trajectory:
    return prefix.slice(len(prefix) - 1)


@dataclass
class NewtonPredictor:
    """Parabolic extrapolation from the last observed state."""

    g: float = GRAVITY
    name: str = "newton"

    def __call__(self, prefix: Trajectory, horizon: int) -> Trajectory:
        if horizon == 0:
            return _hold(prefix)
        out = newton_rollout(prefix.states[-1], horizon, prefix.dt, self.g)
        return replace(out, t0=prefix.times[-1], object_id=prefix.object_id, id=prefix.id)


@dataclass
class NaePredictor:
    """Free-running estimator over the last ``context`` observed frames.

    ``mode="kinematic"`` integrates the estimated accelerations with the
    constant-acceleration transition from the last observed state;
    ``mode="decoded"`` returns the decoded free-running states directly.
    """

    model: NaeModel
    context: int = 24
    mode: str = "kinematic"
    name: str = "nae"

    def __post_init__(self):
        if self.mode not in ("kinematic", "decoded"):
            raise ValueError("mode must be 'kinematic' or 'decoded'")

    def __call__(self, prefix: Trajectory, horizon: int) -> Trajectory:
        if horizon == 0:
            return _hold(prefix)
        ctx = prefix.states[-self.context:]
        with torch.no_grad():
            pred, _, _ = run_sequence(self.model, as_tensor(ctx), k=horizon)
            future = self.model.denormalize(pred[-horizon:]).numpy()
        states = np.empty((horizon + 1, 9))
        states[0] = prefix.states[-1]
        if self.mode == "decoded":
            states[1:] = future
        else:
            A = make_transition_matrix(prefix.dt).numpy()
            for j in range(horizon):
                states[j + 1] = A @ states[j]
                states[j + 1, ACC] = future[j, ACC]
        return Trajectory(states, dt=prefix.dt, t0=prefix.times[-1], object_id=prefix.object_id, id=prefix.id)


@dataclass
class NaedfPredictor:
    model: NaeModel
    config: NaedfConfig = field(default_factory=NaedfConfig)
    name: str = "naedf"

    def __call__(self, prefix: Trajectory, horizon: int) -> Trajectory:
        cfg = self.config if self.config.dt == prefix.dt else replace(self.config, dt=prefix.dt)
        return forecast(self.model, prefix.states, horizon, cfg, t0=prefix.t0,
                        object_id=prefix.object_id, traj_id=prefix.id)


@dataclass
class OraclePredictor:
    """Knows the true trajectories (looked up by id)."""

    truths: Mapping[str, Trajectory]
    name: str = "oracle"

    @classmethod
    def of(cls, trajs: Sequence[Trajectory]) -> OraclePredictor:
        return cls({t.id: t for t in trajs})

    def __call__(self, prefix: Trajectory, horizon: int) -> Trajectory:
        truth = self.truths[prefix.id]
        start = len(prefix) - 1
        seg = truth.slice(start, start + horizon + 1)
        if len(seg) < horizon + 1:
            tail = np.repeat(seg.states[-1:], horizon + 1 - len(seg), axis=0)
            seg = replace(seg, states=np.vstack([seg.states, tail]))
        return seg


@dataclass
class ConstantPredictor:
    """Always predicts the same point (a deliberately useless baseline)."""

    point: Sequence[float]
    name: str = "constant"

    def __call__(self, prefix: Trajectory, horizon: int) -> Trajectory:
        s = np.zeros((horizon + 1, 9))
        s[:, :3] = self.point
        return Trajectory(s, dt=prefix.dt, t0=prefix.times[-1], object_id=prefix.object_id, id=prefix.id)


# ---------------------------------------------------------------------------
# metrics


def goal_errors(predictor: Predictor, trajectory: Trajectory, goal_frame: int | None = None,
                min_prefix: int = MIN_PREFIX) -> tuple[np.ndarray, np.ndarray]:
    """Goal-position error for every observation cutoff.

    Returns ``(remaining_frames, error_m)`` ordered from the earliest cutoff
    (most frames remaining) to the goal frame itself.
    """
    n_goal = len(trajectory) - 1 if goal_frame is None else goal_frame
    if n_goal + 1 < min_prefix:
        raise ValueError(f"trajectory too short: goal frame {n_goal} < minimum prefix {min_prefix}")
    goal = trajectory.positions[n_goal]
    remaining, errors = [], []
    for n_obs in range(min_prefix, n_goal + 2):
        prefix = observed_states(trajectory, n_obs)
        horizon = n_goal - (n_obs - 1)
        pred = predictor(prefix, horizon)
        remaining.append(horizon)
        errors.append(float(np.linalg.norm(pred.positions[horizon] - goal)))
    return np.array(remaining), np.array(errors)


def accumulated_error_curve(predictor: Predictor, trajectory: Trajectory,
                            goal_frame: int | None = None) -> list[tuple[int, float]]:
    remaining, errors = goal_errors(predictor, trajectory, goal_frame)
    return list(zip(remaining.tolist(), errors.tolist()))


def leading_time_from_errors(remaining: np.ndarray, errors: np.ndarray, dt: float,
                             precision_m: float = 0.01) -> float:
    """Longest time-to-goal from which the error stays below ``precision_m``."""
    order = np.argsort(remaining)
    best = 0.0
    for r, e in zip(remaining[order], errors[order]):
        if e >= precision_m:
            break
        best = r * dt
    return float(best)


def leading_time(predictor: Predictor, trajectory: Trajectory, precision_m: float = 0.01) -> float:
    remaining, errors = goal_errors(predictor, trajectory)
    return leading_time_from_errors(remaining, errors, trajectory.dt, precision_m)


@dataclass
class LeadingTimeResult:
    ids: list[str]
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values))

    def summary(self) -> dict:
        return {"mean": self.mean, "std": self.std, "n": len(self.values), "spread": "std"}


@dataclass
class Evaluation:
    """Per-trajectory error curves of one predictor; every metric derives from these."""

    predictor: str
    ids: list[str]
    remaining: list[np.ndarray]
    errors: list[np.ndarray]
    dt: float

    def leading_times(self, precision_m: float = 0.01) -> LeadingTimeResult:
        vals = [leading_time_from_errors(r, e, self.dt, precision_m) for r, e in zip(self.remaining, self.errors)]
        return LeadingTimeResult(list(self.ids), np.array(vals))

    def error_at(self, remaining_frames: int) -> np.ndarray:
        out = []
        for r, e in zip(self.remaining, self.errors):
            hit = np.nonzero(r == remaining_frames)[0]
            out.append(e[hit[0]] if len(hit) else np.nan)
        return np.array(out)

    def mean_curve(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(remaining, mean error, std) over trajectories, on the common range."""
        longest = min(len(r) for r in self.remaining)
        rem = self.remaining[0][-longest:]
        E = np.stack([e[-longest:] for e in self.errors])
        return rem, E.mean(0), E.std(0)


def evaluate(predictor: Predictor, trajectories: Sequence[Trajectory]) -> Evaluation:
    rems, errs = [], []
    for t in trajectories:
        r, e = goal_errors(predictor, t)
        rems.append(r)
        errs.append(e)
    return Evaluation(getattr(predictor, "name", type(predictor).__name__),
                      [t.id for t in trajectories], rems, errs, trajectories[0].dt)


def generalization_matrix(predictors: Sequence[Predictor], datasets: Sequence[Sequence[Trajectory]],
                          precision_m: float = 0.01) -> np.ndarray:
    """Entry ``(i, j)``: mean Leading Time of predictor ``i`` on test set ``j``."""
    M = np.empty((len(predictors), len(datasets)))
    for i, p in enumerate(predictors):
        for j, d in enumerate(datasets):
            M[i, j] = evaluate(p, d).leading_times(precision_m).mean
    return M


def train_test_split(dataset: Sequence, fraction: float = 0.9, seed: int = 0) -> tuple[list, list]:
    """Seeded split by trajectory; the train part holds ``round(fraction * n)`` items."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fraction * n))
    train = sorted(perm[:n_train].tolist())
    test = sorted(perm[n_train:].tolist())
    return [dataset[i] for i in train], [dataset[i] for i in test]


# ---------------------------------------------------------------------------
# reports


def _fmt(x: float) -> str:
    return repr(float(x))


def leading_time_csv(results: Mapping[str, LeadingTimeResult], header_note: str | None = None) -> str:
    buf = io.StringIO()
    if header_note:
        buf.write(f"# {header_note}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["predictor", "trajectory", "leading_time_s"])
    for name, res in results.items():
        for tid, v in zip(res.ids, res.values):
            w.writerow([name, tid, _fmt(v)])
    return buf.getvalue()


def leading_time_summary(results: Mapping[str, LeadingTimeResult], extra: Mapping | None = None) -> str:
    doc = {name: res.summary() for name, res in results.items()}
    doc.update(extra or {})
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def error_curve_csv(evals: Sequence[Evaluation], header_note: str | None = None) -> str:
    buf = io.StringIO()
    if header_note:
        buf.write(f"# {header_note}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["predictor", "trajectory", "remaining_frames", "error_m"])
    for ev in evals:
        for tid, rem, err in zip(ev.ids, ev.remaining, ev.errors):
            for r, e in zip(rem, err):
                w.writerow([ev.predictor, tid, int(r), _fmt(e)])
    return buf.getvalue()


def mean_curve_csv(evals: Sequence[Evaluation], header_note: str | None = None) -> str:
    buf = io.StringIO()
    if header_note:
        buf.write(f"# {header_note}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["predictor", "remaining_frames", "mean_error_m", "std_error_m"])
    for ev in evals:
        for r, m, s in zip(*ev.mean_curve()):
            w.writerow([ev.predictor, int(r), _fmt(m), _fmt(s)])
    return buf.getvalue()


def matrix_csv(M: np.ndarray, rows: Sequence[str], cols: Sequence[str], header_note: str | None = None) -> str:
    buf = io.StringIO()
    if header_note:
        buf.write(f"# {header_note}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trained_on"] + list(cols))
    for name, row in zip(rows, M):
        w.writerow([name] + [_fmt(v) for v in row])
    return buf.getvalue()

