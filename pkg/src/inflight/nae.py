"""Neural Acceleration Estimator: encoder -> LSTM -> decoder over 9-dim states.

States are standardized with per-dimension training statistics stored in the
model; every loss is computed in that normalized space. During free running
the LSTM consumes its own previous output embedding (no decode/re-encode).
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .flight_sim import Trajectory, observed_states
from .statespace import ACC, DTYPE, State9, as_tensor

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, value: float):
        self.step, self.value = step, value
        super().__init__(f"loss became non-finite ({value}) at optimizer step {step}")


def _uniform(shape, fan_in: int, gen: torch.Generator) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return (torch.rand(shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound


class NaeModel(nn.Module):
    """Parameters of the estimator plus the measurement-covariance head.

    Args:
        embed_dim: width of the embedding, the LSTM input and the LSTM hidden
            state (they must coincide for embedding feedback).
        seed: initialization seed.
    """

    def __init__(self, embed_dim: int = 128, seed: int = 0):
        super().__init__()
        E = embed_dim
        self.embed_dim = E
        g = torch.Generator().manual_seed(seed)

        def P(shape, fan_in):
            return nn.Parameter(_uniform(shape, fan_in, g))

        self.enc_w1, self.enc_b1 = P((E, 9), 9), P((E,), 9)
        self.enc_w2, self.enc_b2 = P((E, E), E), P((E,), E)
        self.lstm_w_ih, self.lstm_w_hh = P((4 * E, E), E), P((4 * E, E), E)
        bias = _uniform((4 * E,), E, g)
        bias[E:2 * E] = 1.0  # forget gate
        self.lstm_b = nn.Parameter(bias)
        self.dec_w1, self.dec_b1 = P((E, E), E), P((E,), E)
        self.dec_w2, self.dec_b2 = P((9, E), E), P((9,), E)
        self.cov_w, self.cov_b = P((3, E), E), P((3,), E)
        self.register_buffer("state_mean", torch.zeros(9, dtype=DTYPE))
        self.register_buffer("state_std", torch.ones(9, dtype=DTYPE))

    # normalization -----------------------------------------------------
    def fit_normalization(self, states: np.ndarray, min_std: float = 1e-3) -> None:
        s = np.asarray(states, dtype=float).reshape(-1, 9)
        self.state_mean.copy_(torch.as_tensor(s.mean(0)))
        self.state_std.copy_(torch.as_tensor(np.maximum(s.std(0), min_std)))

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.state_mean) / self.state_std

    def denormalize(self, y: torch.Tensor) -> torch.Tensor:
        return y * self.state_std + self.state_mean

    # building blocks (normalized space) ----------------------------------
    def encode_norm(self, y: torch.Tensor) -> torch.Tensor:
        h = torch.tanh(y @ self.enc_w1.T + self.enc_b1)
        return torch.tanh(h @ self.enc_w2.T + self.enc_b2)

    def decode_norm(self, e: torch.Tensor) -> torch.Tensor:
        h = torch.tanh(e @ self.dec_w1.T + self.dec_b1)
        return h @ self.dec_w2.T + self.dec_b2

    def lstm_cell(self, gates_in: torch.Tensor, h: torch.Tensor, c: torch.Tensor):
        """One LSTM step given the precomputed input projection ``W_ih x + b``."""
        E = self.embed_dim
        gates = gates_in + h @ self.lstm_w_hh.T
        i = torch.sigmoid(gates[..., :E])
        f = torch.sigmoid(gates[..., E:2 * E])
        g = torch.tanh(gates[..., 2 * E:3 * E])
        o = torch.sigmoid(gates[..., 3 * E:])
        c = f * c + i * g
        h = o * torch.tanh(c)
        return h, c

    def input_proj(self, e: torch.Tensor) -> torch.Tensor:
        return e @ self.lstm_w_ih.T + self.lstm_b

    def zero_state(self, batch_shape=()) -> tuple[torch.Tensor, torch.Tensor]:
        z = torch.zeros(*batch_shape, self.embed_dim, dtype=DTYPE)
        return z, z.clone()

    def log_variance(self, h: torch.Tensor) -> torch.Tensor:
        return h @ self.cov_w.T + self.cov_b


# ---------------------------------------------------------------------------
# forward passes (raw SI states in, raw states out)


def encode(state, model: NaeModel) -> torch.Tensor:
    return model.encode_norm(model.normalize(as_tensor(state)))


def decode(embedding, model: NaeModel) -> torch.Tensor:
    return model.denormalize(model.decode_norm(as_tensor(embedding)))


def run_sequence(model: NaeModel, states: torch.Tensor, k: int = 1,
                 state=None) -> tuple[torch.Tensor, torch.Tensor, tuple]:
    """Teacher-forced pass over ``states`` (..., T, 9) then ``k - 1`` feedback steps.

    Returns normalized predictions ``(..., T - 1 + k, 9)`` (entry ``i``
    predicts frame ``i + 1``), the matching LSTM outputs, and the final
    ``(h, c)`` state.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x = model.normalize(as_tensor(states))
    T = x.shape[-2]
    proj = model.input_proj(model.encode_norm(x))
    h, c = model.zero_state(x.shape[:-2]) if state is None else state
    outs = []
    for t in range(T):
        h, c = model.lstm_cell(proj[..., t, :], h, c)
        outs.append(h)
    for _ in range(k - 1):
        h, c = model.lstm_cell(model.input_proj(h), h, c)
        outs.append(h)
    H = torch.stack(outs, dim=-2)
    return model.decode_norm(H), H, (h, c)


def forward_teacher(model: NaeModel, states) -> torch.Tensor:
    """One-step predictions; output ``i`` estimates frame ``i + 1``."""
    states = as_tensor(states)
    if states.shape[-2] < 2:
        raise ValueError("need at least 2 input frames")
    pred, _, _ = run_sequence(model, states, k=1)
    return model.denormalize(pred)


def forward_free(model: NaeModel, states, k: int) -> torch.Tensor:
    """Predictions for frames ``1 .. T - 1 + k`` with embedding feedback past the prefix."""
    pred, _, _ = run_sequence(model, as_tensor(states), k=k)
    return model.denormalize(pred)


def estimate_next(model: NaeModel, states) -> torch.Tensor:
    """Estimate of the state one frame after the given history."""
    return forward_teacher(model, states)[..., -1, :]


class NaeStream:
    """Incremental teacher-forced inference, one frame at a time."""

    def __init__(self, model: NaeModel, batch_shape=()):
        self.model = model
        self.h, self.c = model.zero_state(batch_shape)

    def push(self, state) -> tuple[torch.Tensor, torch.Tensor]:
        """Feed one observed state; returns (raw next-state estimate, LSTM output)."""
        m = self.model
        e = m.encode_norm(m.normalize(as_tensor(state)))
        self.h, self.c = m.lstm_cell(m.input_proj(e), self.h, self.c)
        return m.denormalize(m.decode_norm(self.h)), self.h


# ---------------------------------------------------------------------------
# losses and training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    k: int = 12
    prefix: int = 24
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    clip_norm: float = 5.0
    seed: int = 0
    windows_per_trajectory: int = 4
    embed_dim: int = 128

    def __post_init__(self):
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0 or self.clip_norm <= 0:
            raise ValueError("lr, batch_size and clip_norm must be positive; epochs >= 0")
        if self.k < 1 or self.prefix < 2 or self.windows_per_trajectory < 1:
            raise ValueError("need k >= 1, prefix >= 2, windows_per_trajectory >= 1")
        if len(self.loss_weights) != 3 or any(w < 0 for w in self.loss_weights):
            raise ValueError("loss_weights must be three nonnegative numbers")

    @property
    def window(self) -> int:
        return self.prefix + self.k


@dataclass
class LossTerms:
    teacher: torch.Tensor
    free: torch.Tensor
    recon: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {"L1": float(self.teacher), "L2": float(self.free),
                "L3": float(self.recon), "total": float(self.total)}


def losses(model: NaeModel, batch, prefix: int, k: int,
           weights: Sequence[float] = (1.0, 1.0, 1.0)) -> LossTerms:
    """Teacher-forcing, free-running and reconstruction losses.

    ``batch`` holds windows ``(B, prefix + k, 9)`` of raw states. The
    first ``prefix`` frames are inputs. L1 averages squared errors of the
    teacher-forced predictions of frames ``1..prefix``; L2 those of the
    ``k`` free-running outputs (frames ``prefix..prefix+k-1``); L3 the
    autoencoder error on the input frames.
    """
    w = as_tensor(batch)
    if w.shape[-2] < prefix + k:
        raise ValueError(f"windows of {w.shape[-2]} frames are too short for prefix={prefix}, k={k}")
    y = model.normalize(w)
    inputs = w[..., :prefix, :]
    teacher, _, _ = run_sequence(model, inputs, k=1)
    target_t = y[..., 1:prefix + 1, :]
    L1 = ((target_t - teacher) ** 2).sum(-1).mean()
    if k > 1:
        free, _, _ = run_sequence(model, inputs, k=k)
        free = free[..., prefix - 1:, :]
    else:
        free = teacher[..., prefix - 1:, :]
    target_f = y[..., prefix:prefix + k, :]
    L2 = ((target_f - free) ** 2).sum(-1).mean()
    y_in = y[..., :prefix, :]
    L3 = ((y_in - model.decode_norm(model.encode_norm(y_in))) ** 2).sum(-1).mean()
    w1, w2, w3 = weights
    return LossTerms(L1, L2, L3, w1 * L1 + w2 * L2 + w3 * L3)


def training_states(dataset: Sequence[Trajectory]) -> list[np.ndarray]:
    """Sensor-like states (finite differences of positions) for each throw."""
    return [observed_states(t).states for t in dataset]


def sample_windows(seqs: Sequence[np.ndarray], length: int, per_seq: int,
                   rng: np.random.Generator) -> np.ndarray:
    out = []
    for s in seqs:
        if len(s) < length:
            continue
        starts = rng.integers(0, len(s) - length + 1, size=per_seq)
        out.extend(s[i:i + length] for i in starts)
    if not out:
        raise ValueError(f"no trajectory is long enough for windows of {length} frames")
    return np.stack(out)


def train_nae(model: NaeModel, dataset: Sequence[Trajectory], config: TrainConfig,
              fit_normalization: bool = True) -> tuple[NaeModel, list[dict]]:
    """Adam on the weighted loss over random windows; returns a trained copy.

    The history holds the losses on a fixed probe set, before training
    (epoch 0) and after every epoch.
    """
    if not dataset:
        raise ValueError("empty training set")
    model = copy.deepcopy(model)
    if config.epochs == 0:
        return model, []
    seqs = training_states(dataset)
    if fit_normalization:
        model.fit_normalization(np.concatenate(seqs))
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    probe = torch.as_tensor(sample_windows(seqs, config.window, 1, np.random.default_rng([config.seed, 1])))
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)

    def probe_losses(epoch):
        with torch.no_grad():
            row = losses(model, probe, config.prefix, config.k, config.loss_weights).as_floats()
        return {"epoch": epoch, **row}

    history = [probe_losses(0)]
    step = 0
    for epoch in range(1, config.epochs + 1):
        windows = sample_windows(seqs, config.window, config.windows_per_trajectory, rng)
        order = rng.permutation(len(windows))
        for b in range(0, len(order), config.batch_size):
            batch = torch.as_tensor(windows[order[b:b + config.batch_size]])
            opt.zero_grad()
            terms = losses(model, batch, config.prefix, config.k, config.loss_weights)
            if not torch.isfinite(terms.total):
                raise TrainingDiverged(step, float(terms.total.detach()))
            terms.total.backward()
            nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
            opt.step()
            step += 1
        history.append(probe_losses(epoch))
        log.info("nae epoch %d: %s", epoch, history[-1])
    return model, history


# ---------------------------------------------------------------------------
# checkpoints


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=list).encode()).hexdigest()[:16]


def save_checkpoint(path, model: NaeModel, kind: str = "nae", meta: dict | None = None) -> None:
    info = {"version": CHECKPOINT_VERSION, "kind": kind, "embed_dim": model.embed_dim}
    info.update(meta or {})
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(info, sort_keys=True, default=list)), **arrays)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[NaeModel, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            if "__meta__" not in data.files:
                raise CheckpointError(f"{path}: not a model checkpoint (no metadata)")
            meta = json.loads(str(data["__meta__"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
            model = NaeModel(embed_dim=int(meta["embed_dim"]))
            state = {k: torch.as_tensor(data[k]) for k in data.files if k != "__meta__"}
        model.load_state_dict(state)
    except CheckpointError:
        raise
    except Exception as e:  # bad zip, missing tensors, wrong shapes
        raise CheckpointError(f"{path}: unreadable checkpoint ({e})") from None
    return model, meta


def models_equal(a: NaeModel, b: NaeModel) -> bool:
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(torch.equal(sa[k], sb[k]) for k in sa)


def to_state9(x) -> State9:
    return State9.from_array(as_tensor(x).detach().numpy())

