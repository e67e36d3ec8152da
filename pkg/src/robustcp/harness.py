"""Experiment driver: configuration, splits, repeated runs, and reports.

A run draws (or loads) data once, then repeats the calibrate/predict/eval
cycle over ``n_splits`` random calibration-test splits with a fixed holdout
block. When the rank transform is disabled the holdout block is merged into
calibration so both arms of a comparison consume the same amount of data.

Reports are fully deterministic given (config, seed); wall-clock fields
live in a separate ``meta`` section so the report body is byte-stable.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .calibrate import conformal_quantile, predict_sets, evaluate
from .errors import ConfigError
from .fileio import load_labels, load_scores
from .ptt import fit_ptt_params, ptt_score_fn, rank_transform_batch, sigmoid_transform
from .rng import child_seed, stream
from .robust import (
    CalibrationArtifact,
    rscp_plus_calibrate,
    rscp_plus_sets,
    rscp_set,
    rscp_threshold,
)
from .scores import (
    BlobSpec,
    LabeledDataset,
    TrainConfig,
    aps_score_fn,
    hps_score_fn,
    make_blobs,
    score_matrix,
    train_blob_classifier,
)
from .smoothing import (
    GaussianNoiseSpec,
    ScoreSamples,
    mc_mean,
    mc_score_samples,
    mc_variance,
    smoothed_tilde,
)

METHODS = ("vanilla", "rscp", "rscp_plus")
SCORES = ("hps", "aps")
BOUNDS = ("hoeffding", "empirical_bernstein")


@dataclass(frozen=True)
class PTTSettings:
    enabled: bool = False
    b: float = 0.9
    temperature: float = 1.0 / 400.0
    holdout_size: int = 500

    def __post_init__(self):
        if self.holdout_size < 0:
            raise ConfigError("holdout_size must be nonnegative")
        if not 0.0 < self.b < 1.0 or self.temperature <= 0.0:
            raise ConfigError("need 0 < b < 1 and temperature > 0")


@dataclass(frozen=True)
class ExperimentConfig:
    alpha: float = 0.1
    beta: float = 0.001
    epsilon: float = 0.125
    sigma: float = 0.25
    n_mc: int = 256
    n_splits: int = 50
    seed: int = 0
    method: str = "rscp_plus"
    bound: str = "hoeffding"
    score: str = "hps"
    ptt: PTTSettings = field(default_factory=PTTSettings)
    blobs: BlobSpec | None = field(default_factory=BlobSpec)
    samples_path: str | None = None
    labels_path: str | None = None
    clamp_eps: float = 1e-9
    classifier_lr: float = 0.5
    classifier_epochs: int = 300
    slope_step: float = 0.05

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.score not in SCORES:
            raise ConfigError(f"score must be one of {SCORES}, got {self.score!r}")
        if self.bound not in BOUNDS:
            raise ConfigError(f"bound must be one of {BOUNDS}, got {self.bound!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.method == "rscp_plus" and not self.alpha - 2.0 * self.beta > 0.0:
            raise ConfigError("need alpha - 2*beta > 0 for the certified method")
        if self.epsilon < 0.0 or self.sigma <= 0.0:
            raise ConfigError("need epsilon >= 0 and sigma > 0")
        if self.n_mc < 2 or self.n_splits < 1:
            raise ConfigError("need n_mc >= 2 and n_splits >= 1")
        file_mode = self.samples_path is not None
        if file_mode != (self.labels_path is not None):
            raise ConfigError("samples_path and labels_path must be given together")
        if file_mode and self.blobs is not None:
            raise ConfigError("give either a blob generator or score files, not both")
        if not file_mode and self.blobs is None:
            raise ConfigError("no input source configured")
        if file_mode and self.ptt.enabled:
            raise ConfigError(
                "the rank transform applies to base scores before smoothing; "
                "it cannot be applied to precomputed score files"
            )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["blobs"] = asdict(cfg.blobs) if cfg.blobs is not None else None
    d["ptt"] = asdict(cfg.ptt)
    return d


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build a config from a plain dict, rejecting unknown keys."""
    d = dict(d)
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def sub(cls, value, name):
        if value is None:
            return None
        if not isinstance(value, dict):
            raise ConfigError(f"{name} must be a mapping")
        extra = set(value) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown {name} keys: {sorted(extra)}")
        return cls(**value)

    if "ptt" in d:
        d["ptt"] = sub(PTTSettings, d["ptt"], "ptt")
    if "blobs" in d:
        d["blobs"] = sub(BlobSpec, d["blobs"], "blobs")
    return ExperimentConfig(**d)


def split_data(n: int, holdout_size: int, seed: int, split_index: int):
    """(holdout, cal, test) index arrays.

    The holdout block is fixed across ``split_index``; the remainder is
    reshuffled per split and cut into near-equal calibration/test halves.
    The three blocks are disjoint and exhaustive.
    """
    if not 0 <= holdout_size < n:
        raise ConfigError(f"holdout_size must lie in [0, {n}), got {holdout_size}")
    if n - holdout_size < 2:
        raise ConfigError("need at least 2 examples outside the holdout")
    order = stream(seed, "holdout").permutation(n)
    holdout, rest = order[:holdout_size], order[holdout_size:]
    shuffled = stream(seed, "split", split_index).permutation(rest)
    n_cal = (shuffled.size + 1) // 2
    return holdout, shuffled[:n_cal], shuffled[n_cal:]


def conservativeness(robust_sizes, vanilla_sizes) -> float:
    """Mean robust set size minus mean vanilla set size (same score, same
    test examples)."""
    r = np.asarray(robust_sizes, dtype=float)
    v = np.asarray(vanilla_sizes, dtype=float)
    if r.shape != v.shape:
        raise ValueError(f"size lists differ in length: {r.shape} vs {v.shape}")
    return float(r.mean() - v.mean())


def inverse_cdf_slope(scores, level: float, h_step: float = 0.05) -> float:
    """Finite-difference slope of the empirical inverse CDF at a coverage level.

    A large slope at the target coverage means a flat score CDF there, i.e.
    threshold inflation costs little extra coverage.
    """
    s = np.asarray(scores, dtype=float)
    if not 0.0 < level - h_step and level + h_step < 1.0:
        raise ValueError("need 0 < level - h_step and level + h_step < 1")
    if s.size * h_step < 2.0:
        raise ValueError(f"need at least {int(np.ceil(2 / h_step))} scores, got {s.size}")
    hi = float(np.quantile(s, level + h_step))
    lo = float(np.quantile(s, level - h_step))
    if hi == lo:
        raise ValueError("degenerate quantiles; scores have no spread at this level")
    return (hi - lo) / (2.0 * h_step)


@dataclass
class Report:
    config: dict
    splits: list
    aggregate: dict
    failures: list
    version: str
    meta: dict

    def body_dict(self) -> dict:
        return {
            "config": self.config,
            "splits": self.splits,
            "aggregate": self.aggregate,
            "failures": self.failures,
            "version": self.version,
        }

    def body_json(self) -> str:
        import json

        return json.dumps(self.body_dict(), sort_keys=True, indent=2)

    @property
    def ok(self) -> bool:
        return not self.failures


def aggregate_rows(rows: list) -> dict:
    """Aggregate per-split rows; reused by tests to recompute stored values."""

    def collect(key):
        vals = [r[key] for r in rows if r.get(key) is not None]
        return np.asarray(vals, dtype=float)

    def mean_std(key):
        vals = collect(key)
        if vals.size == 0:
            return None, None
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        return float(vals.mean()), std

    cov_m, cov_s = mean_std("coverage")
    size_m, size_s = mean_std("avg_size")
    cons_m, _ = mean_std("conservativeness")
    triv_m, _ = mean_std("trivial_rate")
    slope_m, _ = mean_std("slope")
    return {
        "n_splits_ok": len(rows),
        "coverage_mean": cov_m,
        "coverage_std": cov_s,
        "size_mean": size_m,
        "size_std": size_s,
        "conservativeness_mean": cons_m,
        "trivial_rate_mean": triv_m,
        "slope_mean": slope_m,
    }


@dataclass
class _Prepared:
    """Input side of a run: either a live score pipeline or a loaded tensor."""

    n: int
    n_classes: int
    labels: np.ndarray
    inputs: np.ndarray | None = None
    raw_score_fn: object = None  # callable (X, rng) -> (m, K), pre-transform
    classifier: object = None
    samples: ScoreSamples | None = None  # file mode


def _prepare(cfg: ExperimentConfig) -> _Prepared:
    if cfg.samples_path is not None:
        samples = load_scores(cfg.samples_path)
        labels = load_labels(cfg.labels_path)
        if labels.size != samples.n:
            raise ConfigError(
                f"{samples.n} score blocks but {labels.size} labels"
            )
        if samples.n_mc != cfg.n_mc:
            raise ConfigError(
                f"score file has n_mc={samples.n_mc}, config says {cfg.n_mc}"
            )
        return _Prepared(
            n=samples.n, n_classes=samples.n_classes, labels=labels, samples=samples
        )

    train, eval_data = make_blobs(cfg.blobs, child_seed(cfg.seed, "data"))
    classifier = train_blob_classifier(
        train, TrainConfig(learning_rate=cfg.classifier_lr, epochs=cfg.classifier_epochs)
    )
    factory = hps_score_fn if cfg.score == "hps" else aps_score_fn
    return _Prepared(
        n=eval_data.n,
        n_classes=eval_data.n_classes,
        labels=eval_data.labels,
        inputs=eval_data.inputs,
        raw_score_fn=factory(classifier),
        classifier=classifier,
    )


def _safe_slope(scores, level, h_step):
    try:
        return inverse_cdf_slope(scores, level, h_step)
    except ValueError:
        return None


def _split_score_fn(cfg: ExperimentConfig, prep: _Prepared, split_index: int, holdout_idx):
    """Score function for one split: the base scores wrapped in the rank
    transform fitted on the holdout's ground-truth base scores."""
    holdout = LabeledDataset(
        prep.inputs[holdout_idx], prep.labels[holdout_idx], prep.n_classes
    )
    matrix = score_matrix(
        prep.classifier, holdout, cfg.score, seed=child_seed(cfg.seed, "holdout-u")
    )
    gt_scores = matrix[np.arange(holdout.n), holdout.labels]
    params = fit_ptt_params(
        gt_scores,
        b=cfg.ptt.b,
        temperature=cfg.ptt.temperature,
        seed=child_seed(cfg.seed, "ptt-tie", split_index),
    )
    return ptt_score_fn(prep.raw_score_fn, params), params


def _run_split_generator(cfg: ExperimentConfig, prep: _Prepared, idx: int) -> dict:
    holdout_idx, cal_idx, test_idx = split_data(
        prep.n, cfg.ptt.holdout_size, cfg.seed, idx
    )
    if not cfg.ptt.enabled:
        cal_idx = np.concatenate([holdout_idx, cal_idx])
        score_fn = prep.raw_score_fn
        params = None
    else:
        score_fn, params = _split_score_fn(cfg, prep, idx, holdout_idx)

    cal_labels = prep.labels[cal_idx]
    test_labels = prep.labels[test_idx]
    row = {"split": idx, "n_cal": int(cal_idx.size), "n_test": int(test_idx.size)}

    if cfg.method == "vanilla":
        cal_dataset = LabeledDataset(prep.inputs[cal_idx], cal_labels, prep.n_classes)
        test_dataset = LabeledDataset(prep.inputs[test_idx], test_labels, prep.n_classes)
        m_cal = score_matrix(
            prep.classifier, cal_dataset, cfg.score, seed=child_seed(cfg.seed, "cal-u", idx)
        )
        m_test = score_matrix(
            prep.classifier, test_dataset, cfg.score, seed=child_seed(cfg.seed, "test-u", idx)
        )
        if params is not None:
            tie = stream(params.seed, "vanilla-tie", idx)
            m_cal = sigmoid_transform(
                rank_transform_batch(m_cal, params, tie), params.b, params.temperature
            )
            m_test = sigmoid_transform(
                rank_transform_batch(m_test, params, tie), params.b, params.temperature
            )
        cal_gt = m_cal[np.arange(cal_idx.size), cal_labels]
        tau = conformal_quantile(cal_gt, cfg.alpha)
        sets = predict_sets(m_test, tau)
        coverage, avg_size = evaluate(sets, test_labels)
        row.update(
            coverage=coverage,
            avg_size=avg_size,
            trivial_rate=float(np.mean([s.size == prep.n_classes for s in sets])),
            conservativeness=None,
            slope=_safe_slope(cal_gt, 1.0 - cfg.alpha, cfg.slope_step),
        )
        return row

    noise_cal = GaussianNoiseSpec(cfg.sigma, cfg.n_mc, child_seed(cfg.seed, "mc-cal", idx))
    noise_test = GaussianNoiseSpec(cfg.sigma, cfg.n_mc, child_seed(cfg.seed, "mc-test", idx))
    samples_cal = mc_score_samples(score_fn, prep.inputs[cal_idx], noise_cal)
    samples_test = mc_score_samples(score_fn, prep.inputs[test_idx], noise_test)
    mean_cal_gt = mc_mean(samples_cal)[np.arange(cal_idx.size), cal_labels]
    mean_test = mc_mean(samples_test)
    var_test = mc_variance(samples_test) if cfg.bound == "empirical_bernstein" else None
    return _finish_robust_split(cfg, row, mean_cal_gt, mean_test, var_test, test_labels)


def _run_split_files(cfg: ExperimentConfig, prep: _Prepared, idx: int) -> dict:
    holdout_idx, cal_idx, test_idx = split_data(
        prep.n, cfg.ptt.holdout_size, cfg.seed, idx
    )
    cal_idx = np.concatenate([holdout_idx, cal_idx])
    cal_labels = prep.labels[cal_idx]
    test_labels = prep.labels[test_idx]
    row = {"split": idx, "n_cal": int(cal_idx.size), "n_test": int(test_idx.size)}

    means = mc_mean(prep.samples)
    mean_cal_gt = means[cal_idx, cal_labels]
    mean_test = means[test_idx]

    if cfg.method == "vanilla":
        tau = conformal_quantile(mean_cal_gt, cfg.alpha)
        sets = predict_sets(mean_test, tau)
        coverage, avg_size = evaluate(sets, test_labels)
        row.update(
            coverage=coverage,
            avg_size=avg_size,
            trivial_rate=float(np.mean([s.size == prep.n_classes for s in sets])),
            conservativeness=None,
            slope=_safe_slope(mean_cal_gt, 1.0 - cfg.alpha, cfg.slope_step),
        )
        return row

    var_test = (
        mc_variance(prep.samples)[test_idx]
        if cfg.bound == "empirical_bernstein"
        else None
    )
    return _finish_robust_split(cfg, row, mean_cal_gt, mean_test, var_test, test_labels)


def _finish_robust_split(cfg, row, mean_cal_gt, mean_test, var_test, test_labels) -> dict:
    """Shared tail of the two robust methods, starting from mean scores."""
    n_classes = mean_test.shape[1]
    tau_base = conformal_quantile(mean_cal_gt, cfg.alpha)

    if cfg.method == "rscp":
        tilde_test = smoothed_tilde(mean_test, cfg.clamp_eps)
        if tau_base.is_infinite:
            tau_adj = None
            vanilla_cut = None
        else:
            tau_tilde = float(smoothed_tilde(tau_base.value, cfg.clamp_eps))
            tau_adj = rscp_threshold(tau_tilde, cfg.epsilon, cfg.sigma)
            vanilla_cut = tau_tilde
        robust = [rscp_set(r, tau_adj) for r in tilde_test]
        vanilla = [rscp_set(r, vanilla_cut) for r in tilde_test]
    else:  # rscp_plus
        tau_mc = rscp_plus_calibrate(mean_cal_gt, cfg.alpha, cfg.beta)
        artifact = CalibrationArtifact(
            tau=tau_base,
            tau_mc=tau_mc,
            alpha=cfg.alpha,
            beta=cfg.beta,
            epsilon=cfg.epsilon,
            sigma=cfg.sigma,
            n_mc=cfg.n_mc,
            bound_variant=cfg.bound,
            clamp_eps=cfg.clamp_eps,
        )
        robust = rscp_plus_sets(mean_test, var_test, artifact)
        vanilla = predict_sets(mean_test, tau_base)

    coverage, avg_size = evaluate(robust, test_labels)
    row.update(
        coverage=coverage,
        avg_size=avg_size,
        trivial_rate=float(np.mean([s.size == n_classes for s in robust])),
        conservativeness=conservativeness(
            [s.size for s in robust], [s.size for s in vanilla]
        ),
        slope=_safe_slope(mean_cal_gt, 1.0 - cfg.alpha, cfg.slope_step),
    )
    return row


def run_experiment(cfg: ExperimentConfig) -> Report:
    """Run the configured pipeline over all splits and aggregate.

    Split failures are recorded (split index, error type, message) rather
    than raised; a report with any failure has ``ok = False`` and the CLI
    exits nonzero on it.
    """
    t0 = time.perf_counter()
    prep = _prepare(cfg)
    run_split = _run_split_files if cfg.samples_path is not None else _run_split_generator
    rows, failures = [], []
    for idx in range(cfg.n_splits):
        try:
            rows.append(run_split(cfg, prep, idx))
        except Exception as exc:  # noqa: BLE001 - per-split isolation is the contract
            failures.append(
                {"split": idx, "error": type(exc).__name__, "message": str(exc)}
            )
    return Report(
        config=config_to_dict(cfg),
        splits=rows,
        aggregate=aggregate_rows(rows),
        failures=failures,
        version=__version__,
        meta={
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "runtime_seconds": time.perf_counter() - t0,
        },
    )


def calibrate_artifact(
    samples: ScoreSamples,
    labels,
    alpha: float,
    beta: float,
    epsilon: float,
    bound: str = "hoeffding",
    clamp_eps: float = 1e-9,
    cal_idx=None,
) -> CalibrationArtifact:
    """Calibrate both thresholds from a score tensor and its labels."""
    labels = np.asarray(labels, dtype=int)
    if labels.size != samples.n:
        raise ConfigError(f"{samples.n} score blocks but {labels.size} labels")
    idx = np.arange(samples.n) if cal_idx is None else np.asarray(cal_idx, dtype=int)
    gt = mc_mean(samples)[idx, labels[idx]]
    return CalibrationArtifact(
        tau=conformal_quantile(gt, alpha),
        tau_mc=rscp_plus_calibrate(gt, alpha, beta),
        alpha=alpha,
        beta=beta,
        epsilon=epsilon,
        sigma=samples.sigma,
        n_mc=samples.n_mc,
        bound_variant=bound,
        clamp_eps=clamp_eps,
    )
