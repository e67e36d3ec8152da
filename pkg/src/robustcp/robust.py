"""Robust prediction sets: threshold inflation and the certified rule.

Two rules are implemented on top of Monte-Carlo smoothed scores:

* the uncertified rule thresholds the Gaussian-inverse-CDF score at an
  inflated cutoff ``tau + epsilon / sigma``;
* the certified rule works directly on the Monte-Carlo mean, calibrated at
  the tighter level ``1 - alpha + 2 beta``, and compares
  ``mean - b_left <= Phi[Phi^{-1}(tau_mc + b_hoef) + epsilon / sigma]``
  where ``b_left`` is the Hoeffding bound, or the per-label empirical
  Bernstein bound when the test-side variance is available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibrate import PredictionSet, Threshold, conformal_quantile, threshold_set
from .errors import ConfigError
from .smoothing import (
    bernstein_bound,
    hoeffding_bound,
    std_normal_cdf,
    std_normal_inv_cdf,
)

BOUND_VARIANTS = ("hoeffding", "empirical_bernstein")


@dataclass(frozen=True)
class CalibrationArtifact:
    """Everything a predictor needs after calibration.

    ``tau`` is the base threshold at level 1 - alpha over the inverse-CDF
    scores; ``tau_mc`` is the certified-rule threshold at level
    1 - alpha + 2 beta over the raw Monte-Carlo means of the true-class
    calibration scores (no clamping is involved on that path).
    """

    tau: Threshold
    tau_mc: Threshold
    alpha: float
    beta: float
    epsilon: float
    sigma: float
    n_mc: int
    bound_variant: str = "hoeffding"
    clamp_eps: float = 1e-9

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.beta < 0.5:
            raise ConfigError(f"beta must lie in (0, 0.5), got {self.beta}")
        if not 1.0 - self.alpha + 2.0 * self.beta < 1.0:
            raise ConfigError("need 1 - alpha + 2*beta < 1; shrink beta or grow alpha")
        if self.epsilon < 0.0:
            raise ConfigError(f"epsilon must be nonnegative, got {self.epsilon}")
        if not self.sigma > 0.0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.n_mc < 2:
            raise ConfigError("n_mc must be at least 2")
        if self.bound_variant not in BOUND_VARIANTS:
            raise ConfigError(f"unknown bound variant {self.bound_variant!r}")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ConfigError(f"clamp_eps must lie in (0, 0.5), got {self.clamp_eps}")

    @property
    def inflation(self) -> float:
        return self.epsilon / self.sigma


def rscp_threshold(tau: float, epsilon: float, sigma: float) -> float:
    """Inflated threshold ``tau + epsilon / sigma``."""
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if epsilon < 0.0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    return tau + epsilon / sigma


def rscp_set(tilde_row, tau_adj: float | None) -> PredictionSet:
    """Uncertified robust set: inverse-CDF scores at the inflated cutoff."""
    return threshold_set(tilde_row, tau_adj)


def rscp_plus_calibrate(cal_mc_scores, alpha: float, beta: float) -> Threshold:
    """Certified-rule threshold: conformal quantile at level 1 - alpha + 2 beta.

    ``cal_mc_scores`` are the Monte-Carlo mean scores of the ground-truth
    class on the calibration set.
    """
    effective_alpha = alpha - 2.0 * beta
    if not effective_alpha > 0.0:
        raise ConfigError(
            f"1 - alpha + 2*beta = {1 - alpha + 2 * beta} must stay below 1"
        )
    return conformal_quantile(cal_mc_scores, effective_alpha)


def certified_cutoff(
    tau_mc: float | None, b_hoef: float, inflation: float, clamp_eps: float
) -> float:
    """Right-hand side of the certified inclusion rule.

    Saturates at 1 (the full-set answer) once ``tau_mc + b_hoef`` reaches 1;
    the inverse-CDF argument is clamped away from 0 as well.
    """
    if tau_mc is None:
        return 1.0
    q = tau_mc + b_hoef
    if q >= 1.0:
        return 1.0
    q = min(max(q, clamp_eps), 1.0 - clamp_eps)
    return float(std_normal_cdf(std_normal_inv_cdf(q) + inflation))


def rscp_plus_set(mc_row, var_row, artifact: CalibrationArtifact) -> PredictionSet:
    """Certified robust prediction set for one test example.

    Parameters
    ----------
    mc_row : (K,) Monte-Carlo mean scores of the (possibly perturbed) input.
    var_row : (K,) per-label sample variances; required under the empirical
        Bernstein variant, ignored otherwise.
    artifact : CalibrationArtifact
    """
    row = np.asarray(mc_row, dtype=float)
    if np.any(row < 0.0) or np.any(row > 1.0):
        raise ValueError("Monte-Carlo mean scores must lie in [0, 1]")
    b_h = hoeffding_bound(artifact.beta, artifact.n_mc)
    cutoff = certified_cutoff(
        artifact.tau_mc.value, b_h, artifact.inflation, artifact.clamp_eps
    )
    if artifact.bound_variant == "empirical_bernstein":
        if var_row is None:
            raise ValueError("empirical Bernstein variant needs the variance row")
        b_left = bernstein_bound(artifact.beta, artifact.n_mc, var_row)
    else:
        b_left = b_h
    mask = row - b_left <= cutoff
    return PredictionSet(included=mask, per_label_score=row)


def rscp_plus_sets(mc_rows, var_rows, artifact: CalibrationArtifact) -> list[PredictionSet]:
    mc_rows = np.asarray(mc_rows, dtype=float)
    if var_rows is None:
        return [rscp_plus_set(r, None, artifact) for r in mc_rows]
    var_rows = np.asarray(var_rows, dtype=float)
    return [rscp_plus_set(r, v, artifact) for r, v in zip(mc_rows, var_rows)]
