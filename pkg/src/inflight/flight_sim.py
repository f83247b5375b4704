"""Ground-truth flight simulation: gravity, quadratic drag and a Magnus term.

The simulator plays three roles: synthetic dataset source, brute-force
reference for the filters, and front-end that turns position logs into
full states by finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .statespace import ACC, GRAVITY, POS, VEL

GRAVITY_VEC = np.array([0.0, 0.0, -GRAVITY])


class SimulationDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class ObjectParams:
    mass: float = 0.1
    drag_coefficient: float = 0.0
    reference_area: float = 0.01
    magnus_coefficient: float = 0.0
    spin_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    spin_rate: float = 0.0
    air_density: float = 1.2

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if self.drag_coefficient < 0:
            raise ValueError("drag_coefficient must be >= 0")
        if not self.reference_area > 0:
            raise ValueError("reference_area must be positive")
        if self.spin_rate != 0 and abs(np.linalg.norm(self.spin_axis) - 1.0) > 1e-9:
            raise ValueError("spin_axis must be a unit vector when spin_rate != 0")


@dataclass
class Trajectory:
    """Uniformly sampled sequence of 9-dim states.

    ``states`` has shape ``(N, 9)``; sample ``i`` is at ``t0 + i * dt``.
    ``covariances`` is optional and only filled by filtering predictors.
    """

    states: np.ndarray
    dt: float
    t0: float = 0.0
    object_id: str = "object"
    id: str = "0"
    covariances: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.ndim != 2 or self.states.shape[1] != 9:
            raise ValueError(f"states must have shape (N, 9), got {self.states.shape}")
        if len(self.states) < 1:
            raise ValueError("trajectory has no samples")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.isfinite(self.states).all():
            raise ValueError(f"trajectory {self.id!r} contains non-finite states")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.states))

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, POS]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, VEL]

    @property
    def accelerations(self) -> np.ndarray:
        return self.states[:, ACC]

    @property
    def duration(self) -> float:
        return self.dt * (len(self.states) - 1)

    def slice(self, start: int, stop: int | None = None) -> Trajectory:
        stop = len(self) if stop is None else stop
        cov = None if self.covariances is None else self.covariances[start:stop]
        return replace(self, states=self.states[start:stop].copy(),
                       t0=self.t0 + start * self.dt, covariances=cov)

    def validate(self, min_samples: int = 3) -> None:
        if len(self) < min_samples:
            raise ValueError(f"trajectory {self.id!r} has {len(self)} samples, need >= {min_samples}")

    def equals(self, other: Trajectory) -> bool:
        return (self.id == other.id and self.object_id == other.object_id
                and self.dt == other.dt and self.t0 == other.t0
                and np.array_equal(self.states, other.states))


@dataclass(frozen=True)
class ThrowConfig:
    """Sampling ranges for synthetic throws (uniform within each range).

    Spin is drawn per throw when ``spin_rate_range`` is set; the axis is then
    uniform on the sphere. Otherwise the object's own spin is used.
    """

    position_low: tuple[float, float, float] = (-5.0, -0.1, 1.2)
    position_high: tuple[float, float, float] = (-4.8, 0.1, 1.4)
    speed_range: tuple[float, float] = (5.0, 6.0)
    elevation_range: tuple[float, float] = (25.0, 35.0)
    azimuth_range: tuple[float, float] = (-3.0, 3.0)
    spin_rate_range: tuple[float, float] | None = None
    duration: float = 1.0
    dt: float = 1.0 / 120.0
    position_noise: float = 0.0

    def __post_init__(self):
        if not self.dt > 0 or not self.duration >= self.dt:
            raise ValueError("need dt > 0 and duration >= dt")
        lo, hi = self.speed_range
        if not (0.0 <= lo <= hi <= 20.0):
            raise ValueError("speed range must satisfy 0 <= low <= high <= 20 m/s")
        ranges = [self.speed_range, self.elevation_range, self.azimuth_range]
        ranges += list(zip(self.position_low, self.position_high))
        if self.spin_rate_range is not None:
            ranges.append(self.spin_rate_range)
        if any(a > b for a, b in ranges):
            raise ValueError("empty sampling range (low > high)")
        if self.position_noise < 0:
            raise ValueError("position_noise must be >= 0")


def net_acceleration(state, params: ObjectParams) -> np.ndarray:
    """Gravity plus quadratic drag plus a spin-linear Magnus term."""
    v = np.asarray(state, dtype=float)[VEL]
    k_drag = 0.5 * params.air_density * params.drag_coefficient * params.reference_area / params.mass
    a = GRAVITY_VEC - k_drag * np.linalg.norm(v) * v
    if params.spin_rate != 0.0 and params.magnus_coefficient != 0.0:
        k_mag = params.magnus_coefficient * params.air_density * params.reference_area / params.mass
        a = a + k_mag * params.spin_rate * np.cross(np.asarray(params.spin_axis, dtype=float), v)
    return a


def _rk4_step(pv: np.ndarray, h: float, params: ObjectParams) -> np.ndarray:
    def f(y):
        s = np.concatenate([y, np.zeros(3)])
        return np.concatenate([y[3:], net_acceleration(s, params)])

    k1 = f(pv)
    k2 = f(pv + 0.5 * h * k1)
    k3 = f(pv + 0.5 * h * k2)
    k4 = f(pv + h * k3)
    return pv + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate_trajectory(initial, params: ObjectParams, duration: float, dt: float,
                        substeps: int = 1, object_id: str = "object", traj_id: str = "0") -> Trajectory:
    """Integrate with classical RK4; each sample stores the instantaneous net acceleration.

    ``substeps`` splits every output interval into finer RK4 steps (used for
    reference runs); the output spacing is always ``dt``.
    """
    if not dt > 0 or duration < dt - 1e-12:
        raise ValueError("need dt > 0 and duration >= dt")
    n = int(round(duration / dt))
    y = np.asarray(initial, dtype=float)[:6].copy()
    out = np.empty((n + 1, 9))
    h = dt / substeps
    for i in range(n + 1):
        if not np.isfinite(y).all():
            raise SimulationDiverged(f"non-finite state at sample {i} (t={i * dt:.4f}s)")
        out[i, :6] = y
        out[i, 6:] = net_acceleration(out[i], params)
        if i < n:
            for _ in range(substeps):
                y = _rk4_step(y, h, params)
    return Trajectory(out, dt=dt, object_id=object_id, id=traj_id)


def _spin_for_throw(rng: np.random.Generator, throw: ThrowConfig, params: ObjectParams) -> ObjectParams:
    if throw.spin_rate_range is None:
        return params
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    rate = rng.uniform(*throw.spin_rate_range)
    return replace(params, spin_axis=tuple(axis), spin_rate=float(rate))


def sample_throw(rng: np.random.Generator, throw: ThrowConfig) -> np.ndarray:
    """Initial 9-state for one throw (acceleration filled in by the simulator)."""
    p0 = rng.uniform(throw.position_low, throw.position_high)
    speed = rng.uniform(*throw.speed_range)
    elev = math.radians(rng.uniform(*throw.elevation_range))
    azim = math.radians(rng.uniform(*throw.azimuth_range))
    v0 = speed * np.array([math.cos(elev) * math.cos(azim),
                           math.cos(elev) * math.sin(azim),
                           math.sin(elev)])
    return np.concatenate([p0, v0, np.zeros(3)])


def generate_dataset(throw: ThrowConfig, params: ObjectParams, n: int, seed: int,
                     object_id: str = "object") -> list[Trajectory]:
    """``n`` simulated throws; trajectory ``i`` draws from its own stream ``(seed, i)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        x0 = sample_throw(rng, throw)
        traj_params = _spin_for_throw(rng, throw, params)
        traj = simulate_trajectory(x0, traj_params, throw.duration, throw.dt,
                                   object_id=object_id, traj_id=f"{object_id}-{i:05d}")
        if throw.position_noise > 0:
            noisy = traj.positions + rng.normal(scale=throw.position_noise, size=traj.positions.shape)
            traj = replace(traj, states=states_from_positions(noisy, traj.dt).states)
        out.append(traj)
    return out


def rotation_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def augment(traj: Trajectory, translation: Sequence[float] = (0.0, 0.0, 0.0), yaw: float = 0.0) -> Trajectory:
    """Rotate about +Z by ``yaw`` then translate positions; vectors are only rotated."""
    R = rotation_z(yaw)
    s = traj.states
    out = np.empty_like(s)
    out[:, POS] = s[:, POS] @ R.T + np.asarray(translation, dtype=float)
    out[:, VEL] = s[:, VEL] @ R.T
    out[:, ACC] = s[:, ACC] @ R.T
    return replace(traj, states=out)


def augment_dataset(trajs: Sequence[Trajectory], copies: int, seed: int,
                    translation_range: Sequence[float] = (0.5, 0.5, 0.0),
                    yaw_range: float = math.radians(10.0)) -> list[Trajectory]:
    """Originals plus ``copies`` randomly translated/rotated versions of each."""
    rng = np.random.default_rng(seed)
    half = np.asarray(translation_range, dtype=float)
    out = list(trajs)
    for c in range(copies):
        for t in trajs:
            shift = rng.uniform(-half, half)
            yaw = rng.uniform(-yaw_range, yaw_range)
            out.append(replace(augment(t, shift, yaw), id=f"{t.id}-aug{c}"))
    return out


def states_from_positions(positions, dt: float, t0: float = 0.0,
                          object_id: str = "object", traj_id: str = "0") -> Trajectory:
    """Velocity and acceleration by second-order finite differences.

    Interior frames use central stencils; the two end frames use one-sided
    second-order stencils so no samples are lost.
    """
    p = np.asarray(positions, dtype=float)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError("positions must have shape (N, 3)")
    if len(p) < 5:
        raise ValueError(f"need at least 5 samples to differentiate, got {len(p)}")
    v = np.empty_like(p)
    a = np.empty_like(p)
    v[1:-1] = (p[2:] - p[:-2]) / (2 * dt)
    v[0] = (-3 * p[0] + 4 * p[1] - p[2]) / (2 * dt)
    v[-1] = (3 * p[-1] - 4 * p[-2] + p[-3]) / (2 * dt)
    a[1:-1] = (p[2:] - 2 * p[1:-1] + p[:-2]) / dt**2
    a[0] = (2 * p[0] - 5 * p[1] + 4 * p[2] - p[3]) / dt**2
    a[-1] = (2 * p[-1] - 5 * p[-2] + 4 * p[-3] - p[-4]) / dt**2
    return Trajectory(np.hstack([p, v, a]), dt=dt, t0=t0, object_id=object_id, id=traj_id)


def observed_states(traj: Trajectory, n_frames: int | None = None) -> Trajectory:
    """What a position sensor would yield after ``n_frames`` samples (causal)."""
    n = len(traj) if n_frames is None else n_frames
    return states_from_positions(traj.positions[:n], traj.dt, t0=traj.t0,
                                 object_id=traj.object_id, traj_id=traj.id)


def specific_energy(traj: Trajectory, g: float = GRAVITY) -> np.ndarray:
    """Kinetic plus potential energy per unit mass at each sample."""
    return 0.5 * np.sum(traj.velocities**2, axis=1) + g * traj.positions[:, 2]
