"""Robust conformal training at desk scale.

A differentiable simulation of the robust pipeline over a linear-softmax
model: smoothed one-minus-probability scores, inverse-CDF transform, a soft
conformal threshold with adversarial inflation, sigmoid set membership, and
a classification + set-size loss. Gradients are derived by hand and checked
against central finite differences in the test suite.

The soft threshold is an implicit sigmoid-CDF inversion: tau solves
``sum_i logistic((tau - s_i) / T_q) = level * (n + 1)`` and its gradient
w.r.t. the scores follows from the implicit function theorem; the rows of
that gradient sum to one by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, TrainingDivergedError
from .ptt import logistic
from .rng import stream
from .scores import LabeledDataset, LinearSoftmaxModel, softmax
from .smoothing import std_normal_inv_cdf, std_normal_pdf


@dataclass(frozen=True)
class RCTConfig:
    """Training hyperparameters.

    ``n_train`` Monte-Carlo noise draws per example feed the smoothed-score
    gradient estimate; the training-side clamp band is wider than the
    inference clamp so the 1/pdf factor of the inverse CDF stays bounded.
    """

    alpha: float = 0.1
    epsilon: float = 0.125
    sigma: float = 0.25
    n_train: int = 8
    t_train: float = 0.1
    t_quantile: float = 0.1
    size_weight: float = 1.0
    size_target: float = 1.0
    cal_fraction: float = 0.5
    learning_rate: float = 0.5
    epochs: int = 60
    seed: int = 0
    clamp_eps: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.epsilon < 0.0 or self.sigma <= 0.0:
            raise ConfigError("need epsilon >= 0 and sigma > 0")
        if self.n_train < 1:
            raise ConfigError("n_train must be at least 1")
        if self.t_train <= 0.0 or self.t_quantile <= 0.0:
            raise ConfigError("temperatures must be positive")
        if not 0.0 < self.cal_fraction < 1.0:
            raise ConfigError("cal_fraction must lie in (0, 1)")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ConfigError("clamp_eps must lie in (0, 0.5)")


def soft_quantile(scores, level: float, t_quantile: float) -> tuple[float, np.ndarray]:
    """Differentiable conformal quantile of a score list.

    Solves ``sum_i logistic((tau - s_i)/T) = level * (n + 1)`` by bisection
    (absolute tolerance below 1e-12) and returns the solution together with
    ``d tau / d s_i``, obtained by implicit differentiation. The gradient
    entries are nonnegative and sum to exactly one.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("scores must be a non-empty 1-D collection")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n = s.size
    target = level * (n + 1)
    if not 0.0 < target < n:
        raise ConfigError(
            f"soft quantile target count {target:.3f} must lie strictly inside (0, {n}); "
            "use a larger calibration half or a lower level"
        )

    def count(t: float) -> float:
        return float(np.sum(logistic((t - s) / t_quantile)))

    # logistic(+-40) is saturated to double precision
    lo = float(s.min()) - 40.0 * t_quantile
    hi = float(s.max()) + 40.0 * t_quantile
    while count(lo) > target:
        lo -= max(1.0, hi - lo)
    while count(hi) < target:
        hi += max(1.0, hi - lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if count(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13:
            break
    tau = 0.5 * (lo + hi)

    v = logistic((tau - s) / t_quantile)
    w = v * (1.0 - v)
    denom = w.sum()
    if denom <= 0.0:
        # flat region: all sigmoids saturated; fall back to the nearest score
        grad = np.zeros(n)
        grad[int(np.argmin(np.abs(tau - s)))] = 1.0
    else:
        grad = w / denom
    return tau, grad


def soft_prediction(score, tau_adj: float, t_train: float):
    """Soft set membership ``logistic((tau_adj - score) / T_train)``."""
    if not t_train > 0.0:
        raise ValueError(f"t_train must be positive, got {t_train}")
    return logistic((tau_adj - np.asarray(score, dtype=float)) / t_train)


@dataclass
class RCTIntermediates:
    """Forward-pass internals, kept for diagnostics and the backward pass."""

    tilde_scores: np.ndarray  # (n, K) inverse-CDF scores
    mean_scores: np.ndarray  # (n, K) pre-clamp Monte-Carlo means
    tau_soft: float
    tau_adj: float
    quantile_grad: np.ndarray  # d tau / d s over the calibration half
    soft_preds: np.ndarray  # (n_pred, K)
    cal_idx: np.ndarray
    pred_idx: np.ndarray
    class_loss: float
    size_loss: float


def _default_split(n: int, cfg: RCTConfig, epoch: int = 0) -> tuple[np.ndarray, np.ndarray]:
    perm = stream(cfg.seed, "rct-split", epoch).permutation(n)
    n_cal = min(max(int(round(n * cfg.cal_fraction)), 1), n - 1)
    return perm[:n_cal], perm[n_cal:]


def _default_noise(n: int, d: int, cfg: RCTConfig, epoch: int = 0) -> np.ndarray:
    g = stream(cfg.seed, "rct-noise", epoch)
    return g.standard_normal((n, cfg.n_train, d)) * cfg.sigma


def _smoothed_pipeline(batch, model, cfg, noise):
    X, y = batch.inputs, batch.labels
    noisy = X[:, None, :] + noise  # (n, n_train, d)
    probs = softmax(noisy @ model.weights.T + model.bias)  # (n, n_train, K)
    mean_scores = 1.0 - probs.mean(axis=1)  # (n, K)
    clipped = np.clip(mean_scores, cfg.clamp_eps, 1.0 - cfg.clamp_eps)
    tilde = std_normal_inv_cdf(clipped)
    return noisy, probs, mean_scores, tilde


def rct_forward(
    batch: LabeledDataset,
    model: LinearSoftmaxModel,
    cfg: RCTConfig,
    noise: np.ndarray | None = None,
    split: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[float, RCTIntermediates]:
    """One differentiable pass: loss and intermediates for a batch.

    ``noise`` (n, n_train, d) and ``split`` (cal_idx, pred_idx) default to
    streams keyed by the config seed; passing them explicitly pins the
    common random numbers for gradient checks.
    """
    n = batch.n
    if noise is None:
        noise = _default_noise(n, batch.inputs.shape[1], cfg)
    if split is None:
        split = _default_split(n, cfg)
    cal_idx, pred_idx = np.asarray(split[0], dtype=int), np.asarray(split[1], dtype=int)
    if cal_idx.size == 0 or pred_idx.size == 0:
        raise ConfigError("both batch halves must be non-empty")

    _, _, mean_scores, tilde = _smoothed_pipeline(batch, model, cfg, noise)
    cal_scores = tilde[cal_idx, batch.labels[cal_idx]]
    tau, qgrad = soft_quantile(cal_scores, 1.0 - cfg.alpha, cfg.t_quantile)
    tau_adj = tau + cfg.epsilon / cfg.sigma

    preds = soft_prediction(tilde[pred_idx], tau_adj, cfg.t_train)  # (n_pred, K)
    gt = preds[np.arange(pred_idx.size), batch.labels[pred_idx]]
    class_loss = float(np.mean(1.0 - gt))
    size_excess = preds.sum(axis=1) - cfg.size_target
    size_loss = float(np.mean(np.maximum(0.0, size_excess)))
    loss = class_loss + cfg.size_weight * size_loss
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss (tau={tau}, tau_adj={tau_adj})")

    inter = RCTIntermediates(
        tilde_scores=tilde,
        mean_scores=mean_scores,
        tau_soft=tau,
        tau_adj=tau_adj,
        quantile_grad=qgrad,
        soft_preds=preds,
        cal_idx=cal_idx,
        pred_idx=pred_idx,
        class_loss=class_loss,
        size_loss=size_loss,
    )
    return loss, inter


def rct_gradient(
    batch: LabeledDataset,
    model: LinearSoftmaxModel,
    cfg: RCTConfig,
    noise: np.ndarray | None = None,
    split: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact loss gradient w.r.t. weights and bias under fixed Monte-Carlo noise.

    Chains softmax -> score mean -> clamp (zero gradient outside the band)
    -> inverse CDF (1/pdf factor) -> implicit soft-quantile gradient ->
    sigmoid membership -> loss.
    """
    n = batch.n
    if noise is None:
        noise = _default_noise(n, batch.inputs.shape[1], cfg)
    if split is None:
        split = _default_split(n, cfg)
    cal_idx, pred_idx = np.asarray(split[0], dtype=int), np.asarray(split[1], dtype=int)
    if cal_idx.size == 0 or pred_idx.size == 0:
        raise ConfigError("both batch halves must be non-empty")

    noisy, probs, mean_scores, tilde = _smoothed_pipeline(batch, model, cfg, noise)
    labels = batch.labels
    n_pred = pred_idx.size

    cal_scores = tilde[cal_idx, labels[cal_idx]]
    tau, qgrad = soft_quantile(cal_scores, 1.0 - cfg.alpha, cfg.t_quantile)
    tau_adj = tau + cfg.epsilon / cfg.sigma
    preds = soft_prediction(tilde[pred_idx], tau_adj, cfg.t_train)
    dpred = preds * (1.0 - preds)  # logistic derivative at each membership

    # dL/dc over the prediction half
    dL_dc = np.zeros_like(preds)
    dL_dc[np.arange(n_pred), labels[pred_idx]] -= 1.0 / n_pred
    active = preds.sum(axis=1) - cfg.size_target > 0.0
    dL_dc[active] += cfg.size_weight / n_pred

    # membership depends on tau_adj (+) and on the example's own score (-)
    dL_dtau = float(np.sum(dL_dc * dpred)) / cfg.t_train
    dL_ds = np.zeros_like(tilde)
    dL_ds[pred_idx] = -dL_dc * dpred / cfg.t_train
    dL_ds[cal_idx, labels[cal_idx]] += dL_dtau * qgrad

    # inverse CDF: ds/dm = 1/pdf(s), dead where the clamp is active
    inside = (mean_scores > cfg.clamp_eps) & (mean_scores < 1.0 - cfg.clamp_eps)
    dL_dm = np.where(inside, dL_ds / std_normal_pdf(tilde), 0.0)

    # mean score m = 1 - mean_j p_j  =>  dm/dp_j = -1/n_train
    wp = -dL_dm / cfg.n_train  # (n, K), shared by every noise draw
    u = wp[:, None, :] * probs  # (n, n_train, K)
    g_z = u - probs * u.sum(axis=2, keepdims=True)  # softmax backward
    grad_w = np.einsum("ijk,ijd->kd", g_z, noisy)
    grad_b = g_z.sum(axis=(0, 1))
    return grad_w, grad_b


def train_rct(
    data: LabeledDataset, cfg: RCTConfig
) -> tuple[LinearSoftmaxModel, list[float]]:
    """Gradient-descent loop over the full dataset as one batch per epoch.

    The batch is reshuffled and the Monte-Carlo noise redrawn each epoch
    (fixed within the epoch's gradient step). Returns the final model and
    the per-epoch loss history.
    """
    K, d = data.n_classes, data.inputs.shape[1]
    init = stream(cfg.seed, "rct-init")
    model = LinearSoftmaxModel(0.01 * init.standard_normal((K, d)), np.zeros(K))
    history: list[float] = []
    for epoch in range(cfg.epochs):
        noise = _default_noise(data.n, d, cfg, epoch)
        split = _default_split(data.n, cfg, epoch)
        try:
            loss, _ = rct_forward(data, model, cfg, noise, split)
        except NumericError as exc:
            raise TrainingDivergedError(f"diverged at epoch {epoch}: {exc}") from exc
        history.append(loss)
        grad_w, grad_b = rct_gradient(data, model, cfg, noise, split)
        model = LinearSoftmaxModel(
            model.weights - cfg.learning_rate * grad_w,
            model.bias - cfg.learning_rate * grad_b,
        )
    return model, history
