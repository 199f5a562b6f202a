"""Command-line entry point (``twa``, or ``python -m twa``)."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoints import read_twa1
from .distributed import DistributedConfig
from .errors import TwaError
from .harness import (
    ExperimentConfig,
    GaussianStudyConfig,
    bench_extraction,
    desk_benchmark_config,
    gaussian_study,
    make_splits,
    run_pipeline,
    score,
    train_sgd,
)

AVERAGE_MODES = {"swa": "swa", "lawa": "lawa", "soup": "greedy_soup"}


def _experiment_args(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--dataset", choices=["two_gaussians", "two_moons"])
    p.add_argument("--csv", help="load the dataset from a CSV file instead")
    p.add_argument("--m", type=int, help="synthetic dataset size")
    p.add_argument("--noise", type=float)
    p.add_argument("--layers", help="comma-separated MLP widths, e.g. 2,32,2")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)


def build_config(args) -> ExperimentConfig:
    """Desk-benchmark defaults, then the config file, then explicit flags."""
    seed = args.seed if args.seed is not None else 0
    cfg = desk_benchmark_config(seed)
    if args.config:
        doc = cfg.to_dict()
        user = json.loads(args.config.read_text())
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(doc.get(key), dict):
                doc[key].update(value)
            else:
                doc[key] = value
        cfg = ExperimentConfig.from_dict(doc)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.output_dir:
        cfg = replace(cfg, output_dir=args.output_dir)
    data = cfg.data
    if args.dataset:
        data = replace(data, kind=args.dataset)
    if args.csv:
        data = replace(data, csv_path=args.csv)
    if args.m is not None:
        data = replace(data, m=args.m)
    if args.noise is not None:
        data = replace(data, noise=args.noise)
    model = cfg.model
    if args.layers:
        model = replace(model, layer_sizes=tuple(int(x) for x in args.layers.split(",")))
    sgd = cfg.sgd
    if args.epochs is not None:
        sgd = replace(sgd, epochs=args.epochs)
    if args.lr is not None:
        sgd = replace(sgd, lr=args.lr)
    if args.batch_size is not None:
        sgd = replace(sgd, batch_size=args.batch_size)
    return replace(cfg, data=data, model=model, sgd=sgd)


def _print(doc):
    print(json.dumps(doc, indent=1))


def cmd_train(args):
    cfg = build_config(args)
    run = train_sgd(cfg)
    _print({"manifest": str(run.checkpoints.manifest_path), "n_checkpoints": run.checkpoints.n,
            "final": run.history[-1]})


def cmd_average(args):
    cfg = build_config(args)
    if args.t is not None:
        cfg = replace(cfg, lawa_t=args.t)
    _print(run_pipeline(cfg, AVERAGE_MODES[args.mode]).to_json())


def cmd_twa(args):
    cfg = build_config(args)
    twa = cfg.twa
    for flag, key in [("eta0", "eta0"), ("lam", "lam"), ("twa_steps", "steps"),
                      ("schedule", "schedule"), ("scale_factor", "scale_factor")]:
        value = getattr(args, flag)
        if value is not None:
            twa = replace(twa, **{key: value})
    if args.val_data:
        twa = replace(twa, data_source="validation")
    if args.groups is not None:
        twa = replace(twa, groups=args.groups)
    dist = DistributedConfig(k=args.dist_k) if args.dist_k else cfg.distributed
    cfg = replace(cfg, twa=twa, distributed=dist)
    mode = "twa_by_layer" if args.by_layer else "twa"
    _print(run_pipeline(cfg, mode).to_json())


def cmd_eval(args):
    cfg = build_config(args)
    w = read_twa1(args.weights)
    _print(score(cfg.model, w, make_splits(cfg)))


def cmd_gaussian_study(args):
    cfg = GaussianStudyConfig(D=args.D, n=args.n, trials=args.trials,
                              covariance_scale=args.covariance_scale, seed=args.seed)
    report = gaussian_study(cfg)
    _print({"trials": cfg.trials, "fraction_twa_better": report.fraction_twa_better,
            "mean_twa_error": sum(report.twa_errors) / cfg.trials,
            "mean_swa_error": sum(report.swa_errors) / cfg.trials})


def cmd_bench_extract(args):
    _print(bench_extraction(args.n, args.D, args.repeats, args.seed).to_json())


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twa", description="Trainable weight averaging toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="SGD pre-training with checkpoint sampling")
    _experiment_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("average", help="baseline averaging of sampled checkpoints")
    _experiment_args(p)
    p.add_argument("--mode", choices=sorted(AVERAGE_MODES), required=True)
    p.add_argument("--t", type=int, help="LAWA horizon")
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("twa", help="train averaging coefficients in the checkpoint subspace")
    _experiment_args(p)
    p.add_argument("--by-layer", action="store_true")
    p.add_argument("--groups", type=int)
    p.add_argument("--dist-k", type=int)
    p.add_argument("--val-data", action="store_true", help="fit coefficients on the validation split")
    p.add_argument("--eta0", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--twa-steps", type=int)
    p.add_argument("--schedule", choices=["constant", "scaled_linear", "cosine"])
    p.add_argument("--scale-factor", type=float)
    p.set_defaults(func=cmd_twa)

    p = sub.add_parser("eval", help="score a TWA1 weight file on the train/val/test splits")
    _experiment_args(p)
    p.add_argument("--weights", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gaussian-study", help="SWA vs TWA as estimators of a Gaussian center")
    p.add_argument("--D", type=int, default=20)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--covariance-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gaussian_study)

    p = sub.add_parser("bench-extract", help="time extraction against Gram-Schmidt")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--D", type=int, default=1_000_000)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench_extract)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except TwaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
