"""Nine-dimensional flight state and the linear Kalman steps used by NAE-DF.

State ordering is ``(px, py, pz, vx, vy, vz, ax, ay, az)``. The propagation
model is constant acceleration; the only observed sub-state is acceleration.

All tensor operations are written in torch so that gradients flow through the
filter; every function also accepts a leading batch dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import torch

GRAVITY = 9.81

POS = slice(0, 3)
VEL = slice(3, 6)
ACC = slice(6, 9)

DEFAULT_Q_DIAG = (1e-6, 1e-6, 1e-6, 1e-4, 1e-4, 1e-4, 1e-2, 1e-2, 1e-2)
DEFAULT_SIGMA0_DIAG = (1e-4, 1e-4, 1e-4, 1e-2, 1e-2, 1e-2, 1.0, 1.0, 1.0)
MAX_INNOVATION_COND = 1e12

DTYPE = torch.float64


class NumericalError(ArithmeticError):
    """Raised when a filter step cannot be carried out reliably."""


@dataclass(frozen=True)
class State9:
    """Position, velocity and acceleration of a flying object (SI units)."""

    px: float
    py: float
    pz: float
    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0
    ax: float = 0.0
    ay: float = 0.0
    az: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.array)):
            raise ValueError(f"non-finite state entry: {self.array}")

    @classmethod
    def from_array(cls, values: Sequence[float]) -> State9:
        arr = np.asarray(values, dtype=float).reshape(-1)
        if arr.shape != (9,):
            raise ValueError(f"expected 9 state entries, got {arr.shape[0]}")
        return cls(*map(float, arr))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.pz, self.vx, self.vy, self.vz,
                         self.ax, self.ay, self.az])

    @property
    def position(self) -> np.ndarray:
        return self.array[POS]

    @property
    def velocity(self) -> np.ndarray:
        return self.array[VEL]

    @property
    def acceleration(self) -> np.ndarray:
        return self.array[ACC]


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, State9):
        x = x.array
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)


@dataclass(frozen=True)
class FilterBelief:
    """Gaussian belief over the flight state.

    ``mean`` has shape ``(..., 9)`` and ``cov`` shape ``(..., 9, 9)``.
    """

    mean: torch.Tensor
    cov: torch.Tensor
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mean", as_tensor(self.mean))
        object.__setattr__(self, "cov", as_tensor(self.cov))
        if self.mean.shape[-1] != 9 or self.cov.shape[-2:] != (9, 9):
            raise ValueError("belief must hold a 9-vector mean and a 9x9 covariance")

    def check(self, rtol: float = 1e-9) -> None:
        """Raise ``NumericalError`` unless ``cov`` is symmetric PSD and finite."""
        check_covariance(self.cov, rtol=rtol)
        if not torch.isfinite(self.mean).all():
            raise NumericalError("non-finite belief mean")

    def detach(self) -> FilterBelief:
        return replace(self, mean=self.mean.detach(), cov=self.cov.detach())


@dataclass(frozen=True)
class AccelMeasurement:
    """Acceleration observation ``z`` with covariance ``R`` (shapes (...,3), (...,3,3))."""

    z: torch.Tensor
    R: torch.Tensor = field(default_factory=lambda: torch.eye(3, dtype=DTYPE))

    def __post_init__(self):
        object.__setattr__(self, "z", as_tensor(self.z))
        object.__setattr__(self, "R", as_tensor(self.R))


def check_covariance(cov, rtol: float = 1e-9) -> None:
    cov = as_tensor(cov).detach()
    if not torch.isfinite(cov).all():
        raise NumericalError("non-finite covariance")
    scale = cov.abs().amax(dim=(-2, -1)).clamp_min(1e-300)
    asym = (cov - cov.transpose(-1, -2)).abs().amax(dim=(-2, -1))
    if (asym > rtol * scale).any():
        raise NumericalError(f"covariance not symmetric (max asymmetry {float(asym.max()):.3g})")
    trace = torch.diagonal(cov, dim1=-2, dim2=-1).sum(-1)
    eig_min = torch.linalg.eigvalsh(cov).amin(-1)
    if (eig_min < -rtol * trace.abs()).any():
        raise NumericalError(f"covariance not PSD (min eigenvalue {float(eig_min.min()):.3g})")


def make_transition_matrix(dt: float) -> torch.Tensor:
    """Constant-acceleration transition for one step of length ``dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    A = torch.eye(9, dtype=DTYPE)
    for i in range(3):
        A[i, 3 + i] = dt
        A[3 + i, 6 + i] = dt
        A[i, 6 + i] = 0.5 * dt * dt
    return A


def observation_matrix() -> torch.Tensor:
    """Selects the acceleration block of the state."""
    C = torch.zeros(3, 9, dtype=DTYPE)
    C[:, ACC] = torch.eye(3, dtype=DTYPE)
    return C


def process_noise(diag: Sequence[float] = DEFAULT_Q_DIAG) -> torch.Tensor:
    q = as_tensor(diag)
    if q.shape != (9,) or (q < 0).any():
        raise ValueError("process noise must be 9 nonnegative diagonal entries")
    return torch.diag(q)


def initial_belief(state, time: float = 0.0,
                   sigma0_diag: Sequence[float] = DEFAULT_SIGMA0_DIAG) -> FilterBelief:
    mean = as_tensor(state)
    cov = torch.diag(as_tensor(sigma0_diag)).expand(*mean.shape[:-1], 9, 9).clone()
    return FilterBelief(mean, cov, time)


def predict_step(belief: FilterBelief, A: torch.Tensor, Q: torch.Tensor) -> FilterBelief:
    mean = belief.mean @ A.T
    cov = A @ belief.cov @ A.T + Q
    return FilterBelief(mean, cov, belief.time + float(A[0, 3]))


def update_step(belief: FilterBelief, meas: AccelMeasurement) -> tuple[FilterBelief, torch.Tensor]:
    """Fuse an acceleration measurement; returns the posterior and the 9x3 gain."""
    C = observation_matrix()
    S = C @ belief.cov @ C.T + meas.R
    S = 0.5 * (S + S.transpose(-1, -2))
    cond = torch.linalg.cond(S.detach())
    if not torch.isfinite(cond).all() or (cond > MAX_INNOVATION_COND).any():
        raise NumericalError(
            f"innovation covariance ill-conditioned (cond={float(cond.max()):.3g} "
            f"> {MAX_INNOVATION_COND:.0e}); check R and the prior covariance")
    L = torch.linalg.cholesky(S)
    # K = Sigma C^T S^-1, solved as S K^T = C Sigma (S symmetric)
    PCt = belief.cov @ C.T
    K = torch.cholesky_solve(PCt.transpose(-1, -2), L).transpose(-1, -2)
    innovation = meas.z - belief.mean[..., ACC]
    mean = belief.mean + (K @ innovation.unsqueeze(-1)).squeeze(-1)
    cov = (torch.eye(9, dtype=DTYPE) - K @ C) @ belief.cov
    cov = 0.5 * (cov + cov.transpose(-1, -2))
    return FilterBelief(mean, cov, belief.time), K


def newton_rollout(initial, n_steps: int, dt: float, g: float = GRAVITY):
    """Ballistic propagation with acceleration pinned to gravity.

    Returns a :class:`~inflight.flight_sim.Trajectory` of ``n_steps + 1`` samples
    starting at ``initial`` (whose acceleration is replaced by gravity).
    """
    from .flight_sim import Trajectory

    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.array(as_tensor(initial).numpy(), dtype=float)
    x[ACC] = (0.0, 0.0, -g)
    A = make_transition_matrix(dt).numpy()
    out = np.empty((n_steps + 1, 9))
    out[0] = x
    for i in range(n_steps):
        out[i + 1] = A @ out[i]
    return Trajectory(states=out, dt=dt, object_id="newton")
