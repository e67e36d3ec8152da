"""Command-line entry point.

Subcommands: ``run`` (full repeated-split experiment from a JSON config),
``calibrate`` / ``predict`` / ``eval`` (file-level pipeline pieces),
``synthetic1d`` (closed-form oracle tables as CSV), ``train-rct`` (the
desk-scale robust training loop on blob data), and ``bench`` (quick
throughput numbers).
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from .calibrate import evaluate
from .errors import ConfigError
from .fileio import (
    load_artifact,
    load_labels,
    load_scores,
    load_sets,
    save_artifact,
    save_sets,
)
from .harness import (
    calibrate_artifact,
    config_from_dict,
    run_experiment,
)
from .rct import RCTConfig, train_rct
from .robust import rscp_plus_sets
from .scores import BlobSpec, make_blobs, train_blob_classifier, TrainConfig, hps_score_fn
from .smoothing import GaussianNoiseSpec, mc_mean, mc_score_samples, mc_variance
from .synthetic1d import (
    Oracle1DConfig,
    analytic_metrics,
    failure_base_smoothed,
    failure_ptt_smoothed,
    hps_smoothed,
    numeric_metrics,
    ptt_limit_smoothed,
    symmetric_pair,
)


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _cmd_run(args) -> int:
    raw = _load_json(args.config)
    if args.seed is not None:
        raw = {**raw, "seed": args.seed}
    report = run_experiment(config_from_dict(raw))
    payload = {"meta": report.meta, **report.body_dict()}
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if not report.ok:
        sys.stderr.write(f"{len(report.failures)} split(s) failed\n")
        return 1
    return 0


def _cmd_calibrate(args) -> int:
    samples = load_scores(args.scores)
    labels = load_labels(args.labels)
    art = calibrate_artifact(
        samples,
        labels,
        alpha=args.alpha,
        beta=args.beta,
        epsilon=args.epsilon,
        bound=args.bound,
        clamp_eps=args.clamp_eps,
    )
    save_artifact(art, args.out)
    return 0


def _cmd_predict(args) -> int:
    art = load_artifact(args.artifact)
    samples = load_scores(args.scores)
    if samples.n_mc != art.n_mc:
        raise ConfigError(f"artifact expects n_mc={art.n_mc}, file has {samples.n_mc}")
    var = mc_variance(samples) if art.bound_variant == "empirical_bernstein" else None
    sets = rscp_plus_sets(mc_mean(samples), var, art)
    save_sets(sets, args.out)
    return 0


def _cmd_eval(args) -> int:
    sets = load_sets(args.sets)
    labels = load_labels(args.labels)
    coverage, avg_size = evaluate(sets, labels)
    k = sets[0].n_classes if sets else 0
    trivial = float(np.mean([s.size == k for s in sets])) if sets else float("nan")
    sys.stdout.write(
        json.dumps(
            {"coverage": coverage, "avg_size": avg_size, "trivial_rate": trivial},
            sort_keys=True,
        )
        + "\n"
    )
    return 0


def _cmd_synthetic1d(args) -> int:
    import os

    os.makedirs(args.out_dir, exist_ok=True)

    rows = []
    for sigma2 in (0.01, 0.001, 0.0001):
        sigma = float(np.sqrt(sigma2))
        cfg = Oracle1DConfig(alpha=0.1, epsilon=0.01, sigma=sigma)
        for name, fn in (
            ("hps", hps_smoothed(sigma)),
            ("ptt", ptt_limit_smoothed(sigma, b=1.0 - cfg.alpha)),
        ):
            m = analytic_metrics(fn, cfg)
            rows.append(
                (sigma2, name, m.slope_times_inflation, m.gap, m.avg_size,
                 m.avg_size - (1.0 - cfg.alpha))
            )
    with open(f"{args.out_dir}/table_b1.csv", "w") as fh:
        fh.write("sigma2,score,slope_times_inflation,gap,avg_size,conservativeness\n")
        for sigma2, name, s, g, a, c in rows:
            fh.write(f"{sigma2},{name},{s:.6f},{g:.6f},{a:.6f},{c:.6f}\n")

    with open(f"{args.out_dir}/failure_case.csv", "w") as fh:
        fh.write("sigma,score,tau,avg_size\n")
        for sigma in (0.1, 0.2, 0.3):
            cfg = Oracle1DConfig(
                alpha=0.5, epsilon=0.01 * sigma, sigma=sigma, grid_points=args.grid_points
            )
            for name, fn in (
                ("base", failure_base_smoothed(sigma)),
                ("ptt", failure_ptt_smoothed(sigma)),
            ):
                m = numeric_metrics(symmetric_pair(fn), cfg)
                fh.write(f"{sigma},{name},{m.tau:.6f},{m.avg_size:.6f}\n")
    return 0


def _cmd_train_rct(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    blob_spec = BlobSpec(**raw.get("blobs", {}))
    rct_kwargs = raw.get("rct", {})
    if args.seed is not None:
        rct_kwargs["seed"] = args.seed
    cfg = RCTConfig(**rct_kwargs)
    train, _ = make_blobs(blob_spec, cfg.seed)
    model, history = train_rct(train, cfg)
    payload = {
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "loss_history": history,
        "config": {"blobs": raw.get("blobs", {}), "rct": rct_kwargs},
        "version": __version__,
    }
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bench(args) -> int:
    spec = BlobSpec(n_train=120, n_eval=64)
    train, eval_data = make_blobs(spec, args.seed or 0)
    clf = train_blob_classifier(train, TrainConfig(epochs=100))
    fn = hps_score_fn(clf)
    noise = GaussianNoiseSpec(0.25, 256, 1)
    t0 = time.perf_counter()
    samples = mc_score_samples(fn, eval_data.inputs, noise)
    mc_seconds = time.perf_counter() - t0
    art = calibrate_artifact(samples, eval_data.labels, alpha=0.1, beta=0.001, epsilon=0.125)
    t0 = time.perf_counter()
    rscp_plus_sets(mc_mean(samples), None, art)
    set_seconds = time.perf_counter() - t0
    sys.stdout.write(
        json.dumps(
            {
                "mc_cells": int(samples.values.size),
                "mc_seconds": mc_seconds,
                "mc_cells_per_second": samples.values.size / mc_seconds,
                "sets": samples.n,
                "set_seconds": set_seconds,
            },
            sort_keys=True,
        )
        + "\n"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustcp", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    common.add_argument("--config", default=None, help="JSON config path")

    p = sub.add_parser("run", parents=[common], help="full repeated-split experiment")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("calibrate", parents=[common], help="calibrate thresholds from score files")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.001)
    p.add_argument("--epsilon", type=float, default=0.125)
    p.add_argument("--bound", default="hoeffding", choices=("hoeffding", "empirical_bernstein"))
    p.add_argument("--clamp-eps", type=float, default=1e-9)
    p.set_defaults(fn=_cmd_calibrate)

    p = sub.add_parser("predict", parents=[common], help="certified sets from an artifact")
    p.add_argument("--artifact", required=True)
    p.add_argument("--scores", required=True)
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="coverage/size of stored sets")
    p.add_argument("--sets", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("synthetic1d", parents=[common], help="closed-form oracle tables")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--grid-points", type=int, default=200_001)
    p.set_defaults(fn=_cmd_synthetic1d)

    p = sub.add_parser("train-rct", parents=[common], help="robust conformal training on blobs")
    p.set_defaults(fn=_cmd_train_rct)

    p = sub.add_parser("bench", parents=[common], help="throughput of the hot paths")
    p.set_defaults(fn=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    missing = args.command in ("run",) and not args.config
    if missing:
        sys.stderr.write("run needs --config\n")
        return 2
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
