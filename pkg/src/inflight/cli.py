"""Command-line entry point.

Every subcommand reads an optional YAML config (``--config``), applies
``--set section.key=value`` overrides, writes its outputs plus a
``resolved_config.yaml`` into ``--out``, and stamps the config hash into each
artifact. Failures print one JSON record to stderr and exit with a code
that names the failure class.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .catch_sim import UndefinedRate, catch_report, success_rate
from .config import ConfigError, RunConfig, load_config
from .dataset_io import DatasetFormatError, import_csv, load_dataset, save_dataset
from .evaluation import (
    MIN_PREFIX, error_curve_csv, evaluate, generalization_matrix, leading_time_csv, leading_time_summary,
    matrix_csv, mean_curve_csv, train_test_split,
)
from .flight_sim import Trajectory, observed_states
from .nae import CheckpointError, NaeModel, TrainingDiverged, load_checkpoint, save_checkpoint
from .pipeline import (
    baseline, checkpoint_meta, fit_nae, make_catch_throws, make_dataset, naedf_config,
    predictor_from_checkpoint, run_experiment,
)
from .naedf import train_naedf
from .statespace import NumericalError

log = logging.getLogger("inflight")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_SCHEMA = 4
EXIT_DIVERGED = 5
EXIT_NUMERICAL = 6
EXIT_UNDEFINED_RATE = 7

_ERRORS = [
    (FileNotFoundError, "missing_file", EXIT_MISSING_FILE),
    (DatasetFormatError, "schema_mismatch", EXIT_SCHEMA),
    (CheckpointError, "schema_mismatch", EXIT_SCHEMA),
    (ConfigError, "schema_mismatch", EXIT_SCHEMA),
    (TrainingDiverged, "training_diverged", EXIT_DIVERGED),
    (NumericalError, "numerical_error", EXIT_NUMERICAL),
    (UndefinedRate, "undefined_rate", EXIT_UNDEFINED_RATE),
]


# ---------------------------------------------------------------------------
# helpers


def _outdir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "resolved_config.yaml")
    return out


def _note(cfg: RunConfig) -> str:
    return f"config_hash={cfg.hash()}"


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def _load(path) -> list[Trajectory]:
    trajs = load_dataset(path)
    if not trajs:
        raise DatasetFormatError(str(path), 1, "n_trajectories", "dataset is empty")
    return trajs


def _predictors(args, cfg: RunConfig, truths=()):
    """``--checkpoint [name=]path`` and ``--baseline name`` in command-line order."""
    out = {}
    for spec in args.checkpoint or []:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = None, spec
        p = predictor_from_checkpoint(path, cfg, name)
        out[p.name] = p
    for b in args.baseline or []:
        out[b] = baseline(b, truths)
    if not out:
        raise ConfigError("give at least one --checkpoint or --baseline")
    return out


def _history_csv(history: list[dict], note: str) -> str:
    if not history:
        return f"# {note}\nepoch\n"
    keys = list(history[0])
    rows = [",".join(keys)] + [",".join(repr(float(h[k])) if k != "epoch" else str(h[k]) for k in keys)
                               for h in history]
    return f"# {note}\n" + "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = _outdir(args, cfg)
    if args.import_csv:
        columns = dict(kv.split("=", 1) for kv in args.columns.split(",")) if args.columns else None
        trajs = [import_csv(p, dt=args.dt, columns=columns, object_id=cfg.data.object_id,
                            traj_id=Path(p).stem, time_scale=args.time_scale) for p in args.import_csv]
    else:
        trajs = make_dataset(cfg)
    path = out / args.name
    save_dataset(path, trajs, extra_header={"config_hash": cfg.hash()})
    print(json.dumps({"dataset": str(path), "n_trajectories": len(trajs)}))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    out = _outdir(args, cfg)
    data = _load(args.data)
    if args.mode == "nae":
        model, history = fit_nae(cfg, data)
    else:
        if args.init:
            start, _ = load_checkpoint(args.init)
        else:
            log.warning("no --init checkpoint; training the filter from a fresh estimator")
            start = NaeModel(embed_dim=cfg.nae.embed_dim, seed=cfg.naedf.seed)
        model, history = train_naedf(start, data, naedf_config(cfg, data[0].dt))
    ckpt = out / f"{args.mode}.npz"
    save_checkpoint(ckpt, model, args.mode, checkpoint_meta(cfg, args.mode, history))
    _write(out / f"{args.mode}_history.csv", _history_csv(history, _note(cfg)))
    plotting.loss_history(history, out / f"{args.mode}_history.svg", cfg.hash())
    print(json.dumps({"checkpoint": str(ckpt), "epochs": len(history) - 1 if history else 0}))
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig) -> int:
    out = _outdir(args, cfg)
    data = _load(args.data)
    preds = _predictors(args, cfg, data)
    for name, p in preds.items():
        results = []
        for traj in data:
            if len(traj) < args.prefix_frames:
                raise ConfigError(f"trajectory {traj.id} has {len(traj)} frames < prefix {args.prefix_frames}")
            results.append(p(observed_states(traj, args.prefix_frames), args.horizon))
        path = out / f"predictions_{name}.jsonl"
        save_dataset(path, results, extra_header={"config_hash": cfg.hash(), "predictor": name,
                                                  "prefix_frames": args.prefix_frames})
        log.info("wrote %s", path)
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    out = _outdir(args, cfg)
    note = _note(cfg)
    if args.metric == "split":
        data = _load(args.data[0])
        train, test = train_test_split(data, cfg.data.split_fraction, cfg.data.seed)
        for name, part in (("train", train), ("test", test)):
            save_dataset(out / f"{name}.jsonl", part, extra_header={"config_hash": cfg.hash(), "split": name})
        report = {"train": len(train), "test": len(test), "config_hash": cfg.hash()}
        _write(out / "split.json", json.dumps(report, sort_keys=True) + "\n")
        print(json.dumps(report, sort_keys=True))
        return EXIT_OK

    datasets = [_load(p) for p in args.data]
    if args.metric == "generalization":
        truths = [t for d in datasets for t in d]
        preds = _predictors(args, cfg, truths)
        M = generalization_matrix(list(preds.values()), datasets, cfg.evaluation.precision_m)
        cols = [d[0].object_id for d in datasets]
        _write(out / "generalization.csv", matrix_csv(M, list(preds), cols, note))
        plotting.matrix_heatmap(M, list(preds), cols, out / "generalization.svg", cfg.hash())
        return EXIT_OK

    if len(datasets) != 1:
        raise ConfigError(f"metric {args.metric} takes exactly one --data file")
    data = datasets[0]
    preds = _predictors(args, cfg, data)
    evals = [evaluate(p, data) for p in preds.values()]
    for ev in evals:
        log.info("evaluated %s", ev.predictor)
    if args.metric == "leading_time":
        prec = cfg.evaluation.precision_m
        res = {ev.predictor: ev.leading_times(prec) for ev in evals}
        _write(out / "leading_time.csv", leading_time_csv(res, note))
        _write(out / "leading_time.json", leading_time_summary(
            res, {"config_hash": cfg.hash(), "precision_m": prec}))
        plotting.leading_time_bars({k: (r.mean, r.std) for k, r in res.items()},
                                   out / "leading_time.svg", cfg.hash())
        print(json.dumps({k: round(r.mean, 6) for k, r in res.items()}))
    else:
        _write(out / "error_curve.csv", error_curve_csv(evals, note))
        _write(out / "error_curve_mean.csv", mean_curve_csv(evals, note))
        plotting.error_curves({ev.predictor: ev.mean_curve() for ev in evals},
                              out / "error_curve.svg", cfg.hash())
    return EXIT_OK


def cmd_catch_sim(args, cfg: RunConfig) -> int:
    out = _outdir(args, cfg)
    throws = _load(args.throws) if args.throws else make_catch_throws(cfg)
    c = cfg.catch
    summary = {}
    for name, p in _predictors(args, cfg, throws).items():
        rr = success_rate(p, throws, c.workspace, c.arm, c.basket_radius)
        _write(out / f"catch_{name}.jsonl", catch_report(rr, name, {"config_hash": cfg.hash()}))
        summary[name] = rr.rate
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_run(args, cfg: RunConfig) -> int:
    """Whole experiment: data, both models, held-out metrics and catch runs."""
    out = _outdir(args, cfg)
    note = _note(cfg)
    res = run_experiment(cfg, cache_dir=args.cache)
    evals = list(res.evaluations.values())
    prec = cfg.evaluation.precision_m
    lts = {ev.predictor: ev.leading_times(prec) for ev in evals}
    _write(out / "leading_time.csv", leading_time_csv(lts, note))
    _write(out / "error_curve.csv", error_curve_csv(evals, note))
    _write(out / "error_curve_mean.csv", mean_curve_csv(evals, note))
    for name, hist in (("nae", res.models.nae_history), ("naedf", res.models.naedf_history)):
        _write(out / f"{name}_history.csv", _history_csv(hist, note))
        plotting.loss_history(hist, out / f"{name}_history.svg", cfg.hash())
    plotting.leading_time_bars({k: (r.mean, r.std) for k, r in lts.items()}, out / "leading_time.svg", cfg.hash())
    plotting.error_curves({ev.predictor: ev.mean_curve() for ev in evals}, out / "error_curve.svg", cfg.hash())
    for name, rr in res.catch.items():
        _write(out / f"catch_{name}.jsonl", catch_report(rr, name, {"config_hash": cfg.hash()}))
    k = cfg.evaluation.error_frames
    summary = {
        "config_hash": cfg.hash(),
        "leading_time": {n: r.summary() for n, r in lts.items()},
        f"mean_error_at_{k}_frames": {ev.predictor: float(np.nanmean(ev.error_at(k))) for ev in evals},
        "catch_success_rate": {n: rr.rate for n, rr in res.catch.items()},
    }
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary["catch_success_rate"] | {n: r.mean for n, r in lts.items()}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inflight", description="Trajectory prediction and catch simulation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. nae.epochs=2 (repeatable)")
        p.add_argument("--out", help="output directory (default: config output_dir)")
        return p

    def with_predictors(p):
        p.add_argument("--checkpoint", action="append", metavar="[NAME=]PATH",
                       help="trained model checkpoint (repeatable)")
        p.add_argument("--baseline", action="append", choices=["newton", "oracle"],
                       help="analytic baseline (repeatable)")
        return p

    p = common(sub.add_parser("gen-data", help="simulate throws, or import CSV recordings"))
    p.add_argument("--name", default="dataset.jsonl", help="output file name")
    p.add_argument("--import-csv", nargs="+", metavar="CSV", help="import recorded trajectories instead")
    p.add_argument("--columns", help="column mapping, e.g. t=time,px=x,py=y,pz=z")
    p.add_argument("--dt", type=float, help="sample spacing when the CSV has no time column")
    p.add_argument("--time-scale", type=float, default=1.0, help="multiply CSV times by this")
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("train", help="train the estimator or the filter"))
    p.add_argument("--mode", choices=["nae", "naedf"], required=True)
    p.add_argument("--data", required=True, help="training dataset (.jsonl)")
    p.add_argument("--init", help="estimator checkpoint to warm-start the filter from")
    p.set_defaults(func=cmd_train)

    p = with_predictors(common(sub.add_parser("predict", help="forecast each trajectory from a prefix")))
    p.add_argument("--data", required=True)
    p.add_argument("--prefix-frames", type=int, required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.set_defaults(func=cmd_predict)

    p = with_predictors(common(sub.add_parser("eval", help="metrics reports")))
    p.add_argument("--metric", choices=["leading_time", "error_curve", "generalization", "split"], required=True)
    p.add_argument("--data", nargs="+", required=True, help="dataset(s); generalization takes one per object")
    p.set_defaults(func=cmd_eval)

    p = with_predictors(common(sub.add_parser("catch-sim", help="simulated catching success rates")))
    p.add_argument("--throws", help="throw dataset (default: generated from the catch config)")
    p.set_defaults(func=cmd_catch_sim)

    p = common(sub.add_parser("run", help="full experiment with all reports"))
    p.add_argument("--cache", help="directory for reusable trained checkpoints")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "prefix_frames", MIN_PREFIX) < MIN_PREFIX or getattr(args, "horizon", 0) < 0:
        parser.error(f"--prefix-frames must be >= {MIN_PREFIX} and --horizon >= 0")
    try:
        cfg = load_config(args.config, args.set)
        return args.func(args, cfg)
    except tuple(e for e, _, _ in _ERRORS) as e:
        kind, code = next((k, c) for t, k, c in _ERRORS if isinstance(e, t))
        record = {"error": kind, "message": str(e), "exit_code": code}
        if isinstance(e, TrainingDiverged):
            record["step"] = e.step
        print(json.dumps(record), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
