"""Simulated catching: pick where the predicted path enters the arm's reach and chase it.

The arm is a kinematic point with a speed limit driven by a saturating
velocity law. The simulator re-forecasts every frame as new positions arrive.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .evaluation import MIN_PREFIX, Predictor
from .flight_sim import Trajectory, observed_states


class UndefinedRate(ValueError):
    pass


@dataclass(frozen=True)
class Workspace:
    """Spherical shell around the robot base, optionally cut by height limits."""

    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    inner_radius: float = 0.2
    outer_radius: float = 0.85
    z_min: float | None = None
    z_max: float | None = None

    def __post_init__(self):
        if not 0 < self.inner_radius < self.outer_radius:
            raise ValueError("need 0 < inner_radius < outer_radius")

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.linalg.norm(p - np.asarray(self.center), axis=1)
        ok = (r >= self.inner_radius) & (r <= self.outer_radius)
        if self.z_min is not None:
            ok &= p[:, 2] >= self.z_min
        if self.z_max is not None:
            ok &= p[:, 2] <= self.z_max
        return ok

    def _entry_parameter(self, a: np.ndarray, b: np.ndarray) -> float:
        """Smallest s in [0, 1] where ``a + s (b - a)`` satisfies every violated constraint."""
        c = np.asarray(self.center)
        d, f = b - a, a - c
        qa, qb, qc = d @ d, 2 * f @ d, f @ f
        s = 0.0
        r0 = math.sqrt(qc)
        if r0 > self.outer_radius:
            s = max(s, _sphere_root(qa, qb, qc - self.outer_radius**2, smaller=True))
        elif r0 < self.inner_radius:
            s = max(s, _sphere_root(qa, qb, qc - self.inner_radius**2, smaller=False))
        if self.z_min is not None and a[2] < self.z_min and d[2] != 0:
            s = max(s, (self.z_min - a[2]) / d[2])
        if self.z_max is not None and a[2] > self.z_max and d[2] != 0:
            s = max(s, (self.z_max - a[2]) / d[2])
        return min(max(s, 0.0), 1.0)


def _sphere_root(qa: float, qb: float, qc: float, smaller: bool) -> float:
    disc = max(qb * qb - 4 * qa * qc, 0.0)
    sq = math.sqrt(disc)
    return (-qb - sq) / (2 * qa) if smaller else (-qb + sq) / (2 * qa)


@dataclass(frozen=True)
class Interception:
    position: np.ndarray
    time: float
    index: int


def interception_point(predicted: Trajectory, ws: Workspace) -> Interception | None:
    """First point of ``predicted`` inside ``ws``, interpolated onto the boundary."""
    inside = ws.contains(predicted.positions)
    hits = np.flatnonzero(inside)
    if len(hits) == 0:
        return None
    i = int(hits[0])
    if i == 0:
        return Interception(predicted.positions[0].copy(), float(predicted.t0), 0)
    a, b = predicted.positions[i - 1], predicted.positions[i]
    s = ws._entry_parameter(a, b)
    t = predicted.t0 + (i - 1 + s) * predicted.dt
    return Interception(a + s * (b - a), float(t), i)


def velocity_command(p_cur, p_tar, k: float = 12.0, v_max: float = 1.85,
                     distance_mode: str = "squared") -> tuple[float, np.ndarray]:
    """Saturating speed ``v_max (1 - e^{-kd}) / (1 + e^{-kd})`` towards the target.

    ``d`` is the squared distance by default; ``distance_mode="euclidean"``
    uses the plain distance instead.
    """
    if k <= 0 or v_max <= 0:
        raise ValueError("k and v_max must be positive")
    delta = np.asarray(p_tar, dtype=float) - np.asarray(p_cur, dtype=float)
    dist = float(np.linalg.norm(delta))
    if distance_mode == "squared":
        d = dist * dist
    elif distance_mode == "euclidean":
        d = dist
    else:
        raise ValueError("distance_mode must be 'squared' or 'euclidean'")
    if dist == 0.0:
        return 0.0, np.zeros(3)
    speed = v_max * math.tanh(0.5 * k * d)  # == (1 - e^-kd) / (1 + e^-kd)
    return speed, delta / dist


@dataclass
class ArmState:
    position: tuple[float, float, float]
    v_max: float = 1.85
    k: float = 12.0
    distance_mode: str = "squared"

    def __post_init__(self):
        if not self.v_max > 0 or not self.k > 0:
            raise ValueError("v_max and k must be positive")
        if self.distance_mode not in ("squared", "euclidean"):
            raise ValueError("distance_mode must be 'squared' or 'euclidean'")


@dataclass
class CatchResult:
    trajectory: str
    feasible: bool
    success: bool
    miss_distance: float
    interception_time: float
    replans: int
    max_effector_speed: float = 0.0
    effector_path: np.ndarray | None = field(default=None, repr=False)

    def record(self) -> dict:
        d = asdict(self)
        d.pop("effector_path")
        return d


def _arm_at(path_t: np.ndarray, path_p: np.ndarray, t: float) -> np.ndarray:
    return np.array([np.interp(t, path_t, path_p[:, j]) for j in range(3)])


def simulate_catch(predictor: Predictor, true_traj: Trajectory, ws: Workspace, arm: ArmState,
                   basket_radius: float = 0.10, min_prefix: int = MIN_PREFIX,
                   replan_tol: float = 0.01) -> CatchResult:
    """Closed-loop catch of one throw.

    From the first frame with ``min_prefix`` observations, every frame the
    predictor forecasts the remaining flight, the entry point into ``ws``
    becomes the target, and the effector moves one frame under the velocity
    law. Success is judged where the true object enters the workspace (or,
    if it starts inside, at its closest approach to the effector).
    """
    truth_entry = interception_point(true_traj, ws)
    if truth_entry is None:
        return CatchResult(true_traj.id, False, False, math.inf, math.nan, 0)
    dt, N = true_traj.dt, len(true_traj)
    times = true_traj.times
    eff = np.asarray(arm.position, dtype=float).copy()
    path_t, path_p = [times[min_prefix - 1]], [eff.copy()]
    target, replans, vmax_seen = None, 0, 0.0
    starts_inside = truth_entry.index == 0
    t_end = times[-1] if starts_inside else truth_entry.time
    for n_obs in range(min_prefix, N):
        t_now = times[n_obs - 1]
        if t_now >= t_end:
            break
        pred = predictor(observed_states(true_traj, n_obs), N - n_obs)
        hit = interception_point(pred, ws)
        if hit is not None:
            if target is not None and np.linalg.norm(hit.position - target) > replan_tol:
                replans += 1
            target = hit.position
        if target is not None:
            speed, direction = velocity_command(eff, target, arm.k, arm.v_max, arm.distance_mode)
            step = min(speed, arm.v_max) * dt
            step = min(step, float(np.linalg.norm(target - eff)))
            eff = eff + direction * step
            vmax_seen = max(vmax_seen, step / dt)
        path_t.append(t_now + dt)
        path_p.append(eff.copy())
    pt, pp = np.array(path_t), np.array(path_p)
    if starts_inside:
        inside = np.flatnonzero(ws.contains(true_traj.positions))
        inside = inside[times[inside] >= pt[0]]
        dists = [np.linalg.norm(_arm_at(pt, pp, times[i]) - true_traj.positions[i]) for i in inside]
        j = int(np.argmin(dists)) if dists else 0
        miss = float(dists[j]) if dists else math.inf
        t_hit = float(times[inside[j]]) if dists else math.nan
    else:
        miss = float(np.linalg.norm(_arm_at(pt, pp, truth_entry.time) - truth_entry.position))
        t_hit = truth_entry.time
    return CatchResult(true_traj.id, True, miss < basket_radius, miss, t_hit, replans, vmax_seen, pp)


@dataclass
class RateResult:
    rate: float
    n_feasible: int
    n_excluded: int
    results: list[CatchResult]


def success_rate(predictor: Predictor, throws: Sequence[Trajectory], ws: Workspace, arm: ArmState,
                 basket_radius: float = 0.10, results: Sequence[CatchResult] | None = None) -> RateResult:
    """Fraction of feasible throws caught; throws that never reach the workspace are excluded."""
    if results is None:
        results = [simulate_catch(predictor, t, ws, arm, basket_radius) for t in throws]
    feasible = [r for r in results if r.feasible]
    if not feasible:
        raise UndefinedRate("no throw enters the workspace; success rate is undefined")
    rate = sum(r.success for r in feasible) / len(feasible)
    return RateResult(rate, len(feasible), len(results) - len(feasible), list(results))


def catch_report(rr: RateResult, predictor_name: str, extra: dict | None = None) -> str:
    """JSON lines: one record per throw, then a summary record."""
    lines = [json.dumps({"type": "catch", **r.record()}, sort_keys=True) for r in rr.results]
    summary = {"type": "summary", "predictor": predictor_name, "success_rate": rr.rate,
               "n_feasible": rr.n_feasible, "n_excluded": rr.n_excluded}
    summary.update(extra or {})
    lines.append(json.dumps(summary, sort_keys=True))
    return "\n".join(lines) + "\n"
