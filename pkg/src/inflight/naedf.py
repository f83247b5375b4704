"""NAE-DF: the estimator as acceleration sensor inside a differentiable Kalman filter.

The estimator's acceleration output is the measurement ``z``; its covariance
head supplies a diagonal ``R``. Prediction uses the constant-acceleration
transition. Training maximizes the Gaussian likelihood of ground-truth states
under the filtered beliefs.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .flight_sim import Trajectory
from .nae import NaeModel, NaeStream, TrainingDiverged, run_sequence, training_states
from .statespace import (
    ACC, DEFAULT_Q_DIAG, DEFAULT_SIGMA0_DIAG, DTYPE, AccelMeasurement, FilterBelief,
    as_tensor, check_covariance, initial_belief, make_transition_matrix, predict_step,
    process_noise, update_step,
)

log = logging.getLogger(__name__)


@dataclass
class NaedfConfig:
    """Filter and training settings.

    A sample covers ``window`` observed frames followed by ``horizon``
    forecast frames. All ``window`` frames feed the estimator; only the last
    ``filter_frames`` of them are filtered (the earlier ones just warm up the
    LSTM). Forecasting uses the same layout on the tail of the prefix, and the
    likelihood loss covers the filtered and forecast frames.

    ``feedback`` picks what drives the estimator past the last observation:
    ``"embedding"`` runs it free (its own LSTM output as next input) and
    ``"mean"`` feeds it the filter's mean state.
    """

    gamma: float = 1e-2
    q_diag: tuple = DEFAULT_Q_DIAG
    sigma0_diag: tuple = DEFAULT_SIGMA0_DIAG
    r_floor: float = 1e-4
    det_mode: str = "det"
    window: int = 24
    filter_frames: int = 24
    horizon: int = 12
    dt: float = 1.0 / 120.0
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 20
    clip_norm: float = 5.0
    windows_per_trajectory: int = 4
    seed: int = 0
    check_beliefs: bool = True
    feedback: str = "embedding"

    def __post_init__(self):
        self.q_diag = tuple(float(q) for q in self.q_diag)
        self.sigma0_diag = tuple(float(s) for s in self.sigma0_diag)
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.r_floor > 0:
            raise ValueError("r_floor must be positive")
        if self.feedback not in ("embedding", "mean"):
            raise ValueError("feedback must be 'embedding' or 'mean'")
        if self.det_mode not in ("det", "logdet"):
            raise ValueError("det_mode must be 'det' or 'logdet'")
        if self.filter_frames < 3 or self.window < self.filter_frames or self.horizon < 0:
            raise ValueError("need 3 <= filter_frames <= window and horizon >= 0")
        if self.epochs < 0 or self.lr <= 0 or self.batch_size < 1 or self.clip_norm <= 0:
            raise ValueError("invalid optimizer settings")

    @property
    def Q(self) -> torch.Tensor:
        return process_noise(self.q_diag)


def measurement_from_output(model: NaeModel, pred_raw: torch.Tensor, h: torch.Tensor,
                            r_floor: float) -> AccelMeasurement:
    R = torch.diag_embed(torch.exp(model.log_variance(h)) + r_floor)
    return AccelMeasurement(pred_raw[..., ACC], R)


def measure(model: NaeModel, history, r_floor: float = 1e-4) -> AccelMeasurement:
    """Acceleration of the next-frame estimate with its learned covariance."""
    history = as_tensor(history)
    if history.shape[-2] < 2:
        raise ValueError("need at least 2 history frames")
    pred, H, _ = run_sequence(model, history, k=1)
    return measurement_from_output(model, model.denormalize(pred[..., -1, :]), H[..., -1, :], r_floor)


def filter_window(model: NaeModel | None, observed, config: NaedfConfig, context=None,
                  t0: float = 0.0, measurements: Sequence[AccelMeasurement] | None = None
                  ) -> list[FilterBelief]:
    """Filter ``observed`` (..., T, 9); returns one posterior belief per frame.

    Frame 0 initializes the belief. Frame ``i`` is predicted from ``i - 1``
    and corrected with the estimator run over ``context + observed[:i]``.
    ``measurements`` (one per frame ``1..T-1``) replaces the estimator, e.g.
    by an oracle; ``model`` is then unused.
    """
    observed = as_tensor(observed)
    if observed.shape[-2] < 3:
        raise ValueError("window length must be >= 3")
    if measurements is None:
        beliefs, _ = _filter(model, observed, config, context, t0)
        return beliefs
    if len(measurements) != observed.shape[-2] - 1:
        raise ValueError(f"need {observed.shape[-2] - 1} measurements, got {len(measurements)}")
    return _run_kalman(observed[..., 0, :], measurements, config, t0)


def _run_kalman(x0, measurements, config, t0):
    A, Q = make_transition_matrix(config.dt), config.Q
    belief = initial_belief(x0, t0, config.sigma0_diag)
    beliefs = [belief]
    for meas in measurements:
        belief, _ = update_step(predict_step(belief, A, Q), meas)
        beliefs.append(belief)
    return beliefs


def _filter(model, observed, config, context, t0):
    T = observed.shape[-2]
    if T < 3:
        raise ValueError("window length must be >= 3")
    seq = observed if context is None else torch.cat([as_tensor(context), observed], dim=-2)
    offset = seq.shape[-2] - T
    pred, H, state = run_sequence(model, seq, k=1)
    pred = model.denormalize(pred)
    meas = [measurement_from_output(model, pred[..., offset + i - 1, :], H[..., offset + i - 1, :],
                                    config.r_floor) for i in range(1, T)]
    beliefs = _run_kalman(observed[..., 0, :], meas, config, t0)
    return beliefs, (pred[..., -1, :], H[..., -1, :], state)


def _roll_forward(model, beliefs, last, horizon, config):
    """Continue past the observations with free-running estimator measurements."""
    pred_raw, h, (hs, cs) = last
    stream = NaeStream(model)
    stream.h, stream.c = hs, cs
    A, Q = make_transition_matrix(config.dt), config.Q
    belief = beliefs[-1]
    out = []
    for step in range(horizon):
        belief = predict_step(belief, A, Q)
        meas = measurement_from_output(model, pred_raw, h, config.r_floor)
        belief, _ = update_step(belief, meas)
        out.append(belief)
        if step + 1 < horizon:
            if config.feedback == "mean":
                pred_raw, h = stream.push(belief.mean)
            else:
                stream.h, stream.c = model.lstm_cell(model.input_proj(stream.h), stream.h, stream.c)
                h = stream.h
                pred_raw = model.denormalize(model.decode_norm(h))
    return out


def nll_loss(beliefs: Sequence[FilterBelief], truth, gamma: float = 1e-2,
             det_mode: str = "det") -> torch.Tensor:
    """Mean over frames of the Mahalanobis residual plus ``gamma * det(cov)``."""
    truth = as_tensor(truth)
    if truth.shape[-2] != len(beliefs):
        raise ValueError(f"{len(beliefs)} beliefs but {truth.shape[-2]} truth frames")
    mean = torch.stack([b.mean for b in beliefs], dim=-2)
    cov = torch.stack([b.cov for b in beliefs], dim=-3)
    r = (truth - mean).unsqueeze(-1)
    try:
        L = torch.linalg.cholesky(cov)
    except torch.linalg.LinAlgError as e:
        from .statespace import NumericalError
        raise NumericalError(f"belief covariance is singular: {e}") from None
    maha = (r * torch.cholesky_solve(r, L)).sum((-2, -1))
    if det_mode == "det":
        reg = torch.linalg.det(cov)
    else:
        reg = torch.logdet(cov)
    return (maha + gamma * reg).mean()


def _split(seq: torch.Tensor, config: NaedfConfig):
    n = seq.shape[-2]
    ctx_len = min(n, config.window)
    filt_len = min(ctx_len, config.filter_frames)
    seq = seq[..., n - ctx_len:, :]
    context = seq[..., :ctx_len - filt_len, :] if ctx_len > filt_len else None
    return seq[..., ctx_len - filt_len:, :], context


def filter_and_forecast(model: NaeModel, prefix, horizon: int, config: NaedfConfig) -> list[FilterBelief]:
    """Beliefs for the filtered tail of ``prefix`` followed by ``horizon`` forecast frames."""
    observed, context = _split(as_tensor(prefix), config)
    beliefs, last = _filter(model, observed, config, context, 0.0)
    if horizon:
        beliefs = beliefs + _roll_forward(model, beliefs, last, horizon, config)
    return beliefs


def forecast(model: NaeModel, prefix, horizon: int, config: NaedfConfig, t0: float = 0.0,
             object_id: str = "naedf", traj_id: str = "0") -> Trajectory:
    """Filter the observed prefix then roll the filter ``horizon`` frames ahead.

    Returns ``horizon + 1`` samples; the first is the filtered belief at the
    last observed frame. Covariances are kept on the trajectory.
    """
    prefix = as_tensor(prefix)
    n = prefix.shape[0]
    if n < 3:
        raise ValueError("prefix must hold at least 3 frames")
    with torch.no_grad():
        beliefs = filter_and_forecast(model, prefix, horizon, config)
    path = beliefs[-(horizon + 1):]
    means = torch.stack([b.mean for b in path]).numpy()
    covs = torch.stack([b.cov for b in path]).numpy()
    t_last = t0 + (n - 1) * config.dt
    return Trajectory(means, dt=config.dt, t0=t_last, object_id=object_id, id=traj_id, covariances=covs)


def window_loss(model: NaeModel, windows: torch.Tensor, config: NaedfConfig) -> tuple[torch.Tensor, list]:
    """Likelihood of ``windows`` (..., window + horizon, 9) under filter-then-forecast beliefs."""
    beliefs = filter_and_forecast(model, windows[..., :config.window, :], config.horizon, config)
    truth = windows[..., config.window - min(config.window, config.filter_frames):
                    config.window + config.horizon, :]
    loss = nll_loss(beliefs, truth, config.gamma, config.det_mode)
    return loss, beliefs


def train_naedf(model: NaeModel, dataset: Sequence[Trajectory],
                config: NaedfConfig) -> tuple[NaeModel, list[dict]]:
    """End-to-end likelihood training; returns a trained copy and the probe-loss history."""
    if not dataset:
        raise ValueError("empty training set")
    model = copy.deepcopy(model)
    if config.epochs == 0:
        return model, []
    from .nae import sample_windows

    seqs = training_states(dataset)
    if torch.all(model.state_std == 1) and torch.all(model.state_mean == 0):
        model.fit_normalization(np.concatenate(seqs))
    length = config.window + config.horizon
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    probe = torch.as_tensor(sample_windows(seqs, length, 1, np.random.default_rng([config.seed, 1])))
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)

    def probe_loss(epoch):
        with torch.no_grad():
            loss, _ = window_loss(model, probe, config)
        return {"epoch": epoch, "nll": float(loss)}

    history = [probe_loss(0)]
    step = 0
    for epoch in range(1, config.epochs + 1):
        windows = sample_windows(seqs, length, config.windows_per_trajectory, rng)
        order = rng.permutation(len(windows))
        for b in range(0, len(order), config.batch_size):
            batch = torch.as_tensor(windows[order[b:b + config.batch_size]])
            opt.zero_grad()
            loss, beliefs = window_loss(model, batch, config)
            if not torch.isfinite(loss):
                raise TrainingDiverged(step, float(loss.detach()))
            if config.check_beliefs:
                check_covariance(torch.stack([b.cov for b in beliefs]), rtol=1e-6)
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
            opt.step()
            step += 1
        history.append(probe_loss(epoch))
        log.info("naedf epoch %d: %s", epoch, history[-1])
    return model, history
