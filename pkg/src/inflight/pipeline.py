"""End-to-end experiment steps driven by a ``RunConfig``.

Each step is a plain function so the CLI and the test-suite share one code
path. ``trained_models`` caches checkpoints keyed by the config hash.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .catch_sim import RateResult, success_rate
from .config import RunConfig
from .evaluation import (
    Evaluation, NaedfPredictor, NaePredictor, NewtonPredictor, OraclePredictor, Predictor,
    evaluate, train_test_split,
)
from .flight_sim import Trajectory, generate_dataset
from .nae import NaeModel, load_checkpoint, save_checkpoint, train_nae
from .naedf import NaedfConfig, train_naedf

log = logging.getLogger(__name__)


def make_dataset(cfg: RunConfig) -> list[Trajectory]:
    d = cfg.data
    return generate_dataset(d.throw, d.params, d.n, d.seed, d.object_id)


def split_dataset(cfg: RunConfig, dataset: Sequence[Trajectory]) -> tuple[list, list]:
    return train_test_split(dataset, cfg.data.split_fraction, cfg.data.seed)


def make_catch_throws(cfg: RunConfig) -> list[Trajectory]:
    """Fresh throws from the training distribution under the catch seed."""
    d = cfg.data
    return generate_dataset(d.throw, d.params, cfg.catch.n_throws, cfg.catch.seed, f"{d.object_id}-catch")


def naedf_config(cfg: RunConfig, dt: float) -> NaedfConfig:
    return replace(cfg.naedf, dt=dt)


def fit_nae(cfg: RunConfig, train: Sequence[Trajectory]) -> tuple[NaeModel, list[dict]]:
    model = NaeModel(embed_dim=cfg.nae.embed_dim, seed=cfg.nae.seed)
    return train_nae(model, train, cfg.nae)


def fit_naedf(cfg: RunConfig, nae_model: NaeModel, train: Sequence[Trajectory]) -> tuple[NaeModel, list[dict]]:
    """Warm-started from the trained estimator."""
    return train_naedf(nae_model, train, naedf_config(cfg, train[0].dt))


def checkpoint_meta(cfg: RunConfig, kind: str, history: list[dict]) -> dict:
    meta = {"config_hash": cfg.hash(), "history": history}
    if kind == "naedf":
        meta["naedf_config"] = dataclasses.asdict(cfg.naedf)
    else:
        meta["train_config"] = dataclasses.asdict(cfg.nae)
    return meta


@dataclass
class TrainedModels:
    nae: NaeModel
    naedf: NaeModel
    nae_history: list[dict]
    naedf_history: list[dict]


def trained_models(cfg: RunConfig, train: Sequence[Trajectory], cache_dir=None) -> TrainedModels:
    """Train both models, or load them from ``cache_dir`` when built from the same config."""
    paths = None
    if cache_dir is not None:
        cache = Path(cache_dir) / cfg.hash()
        cache.mkdir(parents=True, exist_ok=True)
        paths = cache / "nae.npz", cache / "naedf.npz"
        if all(p.exists() for p in paths):
            (nae, m1), (df, m2) = load_checkpoint(paths[0]), load_checkpoint(paths[1])
            log.info("loaded cached models from %s", cache)
            return TrainedModels(nae, df, m1["history"], m2["history"])
    nae, h1 = fit_nae(cfg, train)
    df, h2 = fit_naedf(cfg, nae, train)
    if paths is not None:
        save_checkpoint(paths[0], nae, "nae", checkpoint_meta(cfg, "nae", h1))
        save_checkpoint(paths[1], df, "naedf", checkpoint_meta(cfg, "naedf", h2))
    return TrainedModels(nae, df, h1, h2)


def predictor_from_checkpoint(path, cfg: RunConfig, name: str | None = None) -> Predictor:
    model, meta = load_checkpoint(path)
    kind = meta.get("kind", "nae")
    if kind == "naedf":
        ncfg = NaedfConfig(**meta["naedf_config"]) if "naedf_config" in meta else cfg.naedf
        return NaedfPredictor(model, ncfg, name=name or "naedf")
    ev = cfg.evaluation
    return NaePredictor(model, ev.nae_context, ev.nae_mode, name=name or "nae")


def baseline(name: str, truths: Sequence[Trajectory] = ()) -> Predictor:
    if name == "newton":
        return NewtonPredictor()
    if name == "oracle":
        return OraclePredictor.of(truths)
    raise ValueError(f"unknown baseline {name!r} (choose newton or oracle)")


def standard_predictors(cfg: RunConfig, models: TrainedModels, dt: float) -> dict[str, Predictor]:
    ev = cfg.evaluation
    return {
        "newton": NewtonPredictor(),
        "nae": NaePredictor(models.nae, ev.nae_context, ev.nae_mode),
        "naedf": NaedfPredictor(models.naedf, naedf_config(cfg, dt)),
    }


@dataclass
class ExperimentResult:
    evaluations: dict[str, Evaluation]
    catch: dict[str, RateResult]
    models: TrainedModels
    config_hash: str


def run_experiment(cfg: RunConfig, cache_dir=None, catch_predictors: Sequence[str] = ("oracle", "newton", "naedf")
                   ) -> ExperimentResult:
    """Data, training, held-out evaluation and paired catch runs."""
    data = make_dataset(cfg)
    train, test = split_dataset(cfg, data)
    models = trained_models(cfg, train, cache_dir)
    preds = standard_predictors(cfg, models, data[0].dt)
    evals = {}
    for name, p in preds.items():
        log.info("evaluating %s on %d trajectories", name, len(test))
        evals[name] = evaluate(p, test)
    throws = make_catch_throws(cfg)
    preds["oracle"] = OraclePredictor.of(throws)
    c = cfg.catch
    catch = {name: success_rate(preds[name], throws, c.workspace, c.arm, c.basket_radius)
             for name in catch_predictors}
    return ExperimentResult(evals, catch, models, cfg.hash())
