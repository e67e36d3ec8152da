"""Closed-form 1-D oracle for the smoothed-score pipeline.

The setting: binary labels, x uniform on (-0.5, 0) for the negative class
and on (0, 0.5) for the positive class, and a clipped-linear base model
``pi(x, +) = clip(x + 0.5, 0, 1)``. For any monotone base score the smoothed
score h(x) of the negative class determines everything in closed form:

* threshold  tau = h(-alpha/2),
* score CDF  F(t) = 2 h^{-1}(t) + 1 on (h(-0.5), h(0)), 0 below, 1 above,
* coverage gap  alpha + F(tau + inflation) - 1,
* average set size  2 h^{-1}(tau + inflation) + 1, saturating at 2,
* CDF slope at tau  2 / h'(-alpha/2).

Four score kinds are provided: the smoothed clipped-linear score, its
sharp-transform limit (exactly linear in x), and the two engineered
non-monotone scores whose metrics must be computed numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericError
from .smoothing import std_normal_cdf, std_normal_inv_cdf, std_normal_pdf

KINDS = ("hps", "ptt_limit", "failure_base", "failure_ptt")
_MONOTONE = {"hps": True, "ptt_limit": True, "failure_base": False, "failure_ptt": False}
_TINY = 1e-300


@dataclass(frozen=True)
class Oracle1DConfig:
    """Evaluation settings.

    ``epsilon`` is the adversarial radius; the threshold inflation is always
    epsilon / sigma. ``grid_points`` controls the numeric CDF resolution and
    ``refine_tol`` is the absolute agreement required between the full and
    half-resolution grids (the integration-tolerance check).
    """

    alpha: float = 0.1
    epsilon: float = 0.01
    sigma: float = 0.1
    b: float = 0.9
    grid_points: int = 200_001
    refine_tol: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.sigma <= 0.0 or self.epsilon < 0.0:
            raise ValueError("need sigma > 0 and epsilon >= 0")
        if self.grid_points < 1000:
            raise ValueError("grid_points must be at least 1000")

    @property
    def inflation(self) -> float:
        return self.epsilon / self.sigma


@dataclass(frozen=True)
class SmoothedScoreFn:
    """A smoothed score x -> h(x) for the negative class, plus its derivative.

    ``offset`` is subtracted from h; shifting changes neither h' nor any of
    the oracle metrics and is how candidates are brought to a common
    threshold for the optimality comparison.
    """

    kind: str
    sigma: float
    b: float | None = None
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}")
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if self.kind == "ptt_limit" and self.b is None:
            raise ValueError("ptt_limit needs the offset parameter b")

    @property
    def monotone(self) -> bool:
        return _MONOTONE[self.kind]

    def mean_score(self, x):
        """Inner expectation m(x) of the base score under the Gaussian, in [0, 1]."""
        x = np.asarray(x, dtype=float)
        s = self.sigma
        if self.kind == "ptt_limit":
            return std_normal_cdf((x + 0.5 - self.b) / s)
        gauss = s / math.sqrt(2.0 * math.pi) * (
            np.exp(-((x + 0.5) ** 2) / (2.0 * s * s))
            - np.exp(-((x - 0.5) ** 2) / (2.0 * s * s))
        )
        ramp = (x + 0.5) * (std_normal_cdf((0.5 - x) / s) - std_normal_cdf((-0.5 - x) / s))
        if self.kind == "hps":
            return gauss + ramp + std_normal_cdf((x - 0.5) / s)
        if self.kind == "failure_base":
            return gauss + ramp + 0.5 * std_normal_cdf((x - 0.5) / s) + 0.5 * std_normal_cdf(
                (-x - 0.5) / s
            )
        # failure_ptt: smoothing of the indicator of (-inf, -0.5] u [0, 0.5)
        return (
            std_normal_cdf((-x - 0.5) / s)
            + std_normal_cdf((-x + 0.5) / s)
            - std_normal_cdf(-x / s)
        )

    def mean_score_prime(self, x):
        """Derivative of the inner expectation (smoothing of the base score's
        weak derivative: the interior slope plus the boundary jumps)."""
        x = np.asarray(x, dtype=float)
        s = self.sigma
        if self.kind == "ptt_limit":
            return std_normal_pdf((x + 0.5 - self.b) / s) / s
        window = std_normal_cdf((0.5 - x) / s) - std_normal_cdf((-0.5 - x) / s)
        if self.kind == "hps":
            return window
        if self.kind == "failure_base":
            return window - 0.5 / s * (
                std_normal_pdf((-0.5 - x) / s) + std_normal_pdf((0.5 - x) / s)
            )
        return (
            -std_normal_pdf((-x - 0.5) / s)
            + std_normal_pdf(-x / s)
            - std_normal_pdf((-x + 0.5) / s)
        ) / s

    def h(self, x):
        """Smoothed score after the Gaussian inverse CDF, minus the offset."""
        if self.kind == "ptt_limit":
            out = (np.asarray(x, dtype=float) + 0.5 - self.b) / self.sigma - self.offset
            return float(out) if np.ndim(x) == 0 else out
        m = np.clip(self.mean_score(x), _TINY, 1.0 - 1e-16)
        out = std_normal_inv_cdf(m) - self.offset
        return float(out) if np.ndim(x) == 0 else out

    def h_prime(self, x):
        """Chain rule: m'(x) / pdf(h(x))."""
        if self.kind == "ptt_limit":
            out = np.full(np.shape(x), 1.0 / self.sigma)
            return float(out) if np.ndim(x) == 0 else out
        out = self.mean_score_prime(x) / std_normal_pdf(
            np.asarray(self.h(x), dtype=float) + self.offset
        )
        return float(out) if np.ndim(x) == 0 else out

    def h_inverse(self, t: float) -> float:
        """Solve h(x) = t for monotone kinds (closed form or bisection to 1e-12)."""
        if not self.monotone:
            raise ValueError("h_inverse is only defined for monotone score kinds")
        if self.kind == "ptt_limit":
            return self.sigma * (t + self.offset) + self.b - 0.5
        lo, hi = -2.0, 2.0
        while self.h(lo) > t:
            lo *= 2.0
            if lo < -1e6:
                raise NumericError(f"failed to bracket h_inverse({t})")
        while self.h(hi) < t:
            hi *= 2.0
            if hi > 1e6:
                raise NumericError(f"failed to bracket h_inverse({t})")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.h(mid) < t:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12:
                break
        return 0.5 * (lo + hi)

    def shifted(self, delta: float) -> "SmoothedScoreFn":
        return replace(self, offset=self.offset + delta)

    def mirrored(self) -> "MirroredScoreFn":
        """The positive-class score of the symmetric construction."""
        return MirroredScoreFn(self)


@dataclass(frozen=True)
class MirroredScoreFn:
    """x -> base(-x); the positive-class evaluator of a symmetric pair."""

    base: SmoothedScoreFn

    def mean_score(self, x):
        return self.base.mean_score(-np.asarray(x, dtype=float))

    def h(self, x):
        return self.base.h(-np.asarray(x, dtype=float))


def hps_smoothed(sigma: float) -> SmoothedScoreFn:
    return SmoothedScoreFn(kind="hps", sigma=sigma)


def ptt_limit_smoothed(sigma: float, b: float) -> SmoothedScoreFn:
    return SmoothedScoreFn(kind="ptt_limit", sigma=sigma, b=b)


def failure_base_smoothed(sigma: float) -> SmoothedScoreFn:
    return SmoothedScoreFn(kind="failure_base", sigma=sigma)


def failure_ptt_smoothed(sigma: float) -> SmoothedScoreFn:
    return SmoothedScoreFn(kind="failure_ptt", sigma=sigma)


def analytic_threshold(fn: SmoothedScoreFn, alpha: float) -> float:
    """Conformal threshold of the population pipeline: h(-alpha/2)."""
    if not fn.monotone:
        raise ValueError("analytic threshold needs a monotone score; use numeric_metrics")
    return float(fn.h(-alpha / 2.0))


def _cdf_value(fn: SmoothedScoreFn, t: float) -> float:
    """Lemma-style score CDF: 0 / 2 h^{-1}(t) + 1 / 1 by branch."""
    if t <= fn.h(-0.5):
        return 0.0
    if t >= fn.h(0.0):
        return 1.0
    return 2.0 * fn.h_inverse(t) + 1.0


@dataclass(frozen=True)
class AnalyticMetrics:
    gap: float
    avg_size: float
    slope_times_inflation: float
    tau: float
    tau_adj: float


def analytic_metrics(fn: SmoothedScoreFn, cfg: Oracle1DConfig) -> AnalyticMetrics:
    """Coverage gap, average set size, and slope-times-inflation in closed form.

    The size expression saturates at 2 once the inflated threshold passes
    h(0.5) and at 0 below h(-0.5) (the CDF's zero branch).
    """
    if not fn.monotone:
        raise ValueError("analytic metrics need a monotone score; use numeric_metrics")
    if not math.isclose(cfg.sigma, fn.sigma, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"config sigma {cfg.sigma} != score sigma {fn.sigma}")
    alpha = cfg.alpha
    tau = analytic_threshold(fn, alpha)
    tau_adj = tau + cfg.inflation
    gap = alpha + _cdf_value(fn, tau_adj) - 1.0
    if tau_adj >= fn.h(0.5):
        size = 2.0
    elif tau_adj <= fn.h(-0.5):
        size = 0.0
    else:
        size = 2.0 * min(max(fn.h_inverse(tau_adj), -0.5), 0.5) + 1.0
    slope = 2.0 / fn.h_prime(-alpha / 2.0)
    return AnalyticMetrics(
        gap=gap,
        avg_size=size,
        slope_times_inflation=slope * cfg.inflation,
        tau=tau,
        tau_adj=tau_adj,
    )


@dataclass(frozen=True)
class NumericMetrics:
    tau: float
    avg_size: float


def _midpoints(lo: float, hi: float, count: int) -> np.ndarray:
    return lo + (np.arange(count) + 0.5) * (hi - lo) / count


def _numeric_once(minus, plus, cfg: Oracle1DConfig, grid: int) -> tuple[float, float]:
    # Work in mean-score space: the inverse CDF is monotone, so order
    # statistics and threshold comparisons transfer exactly and no
    # vectorized quantile evaluation is needed.
    xs_neg = _midpoints(-0.5, 0.0, grid)
    xs_pos = _midpoints(0.0, 0.5, grid)
    gt_pool = np.concatenate([minus.mean_score(xs_neg), plus.mean_score(xs_pos)])
    k = max(1, math.ceil((1.0 - cfg.alpha) * gt_pool.size - 1e-9))
    m_tau = float(np.partition(gt_pool, k - 1)[k - 1])
    tau = float(std_normal_inv_cdf(np.clip(m_tau, _TINY, 1.0 - 1e-16)))
    m_adj = float(std_normal_cdf(tau + cfg.inflation))

    xs_all = _midpoints(-0.5, 0.5, 2 * grid)
    size = float(
        np.mean(minus.mean_score(xs_all) <= m_adj) + np.mean(plus.mean_score(xs_all) <= m_adj)
    )
    return tau, size


def numeric_metrics(score_pair, cfg: Oracle1DConfig) -> NumericMetrics:
    """Threshold and average size by numerical integration over x.

    ``score_pair`` is (negative-class fn, positive-class fn); build the pair
    with :func:`symmetric_pair` for the standard symmetric construction.
    The computation is repeated at half resolution and must agree within
    ``cfg.refine_tol`` or a NumericError is raised.
    """
    minus, plus = score_pair
    tau, size = _numeric_once(minus, plus, cfg, cfg.grid_points)
    tau2, size2 = _numeric_once(minus, plus, cfg, cfg.grid_points // 2)
    if abs(tau - tau2) > cfg.refine_tol or abs(size - size2) > cfg.refine_tol:
        raise NumericError(
            f"grid refinement moved the result by ({abs(tau - tau2):.2e}, "
            f"{abs(size - size2):.2e}), above tol {cfg.refine_tol}"
        )
    return NumericMetrics(tau=tau, avg_size=size)


def symmetric_pair(fn: SmoothedScoreFn):
    return fn, fn.mirrored()


def optimality_check(candidates, alpha: float) -> int:
    """Index of the candidate with the steepest h at the threshold point.

    All candidates must share the same threshold h(-alpha/2) (shift them
    first; shifting does not change h'). Ties resolve to the first index.
    """
    fns = list(candidates)
    if not fns:
        raise ValueError("need at least one candidate")
    taus = np.array([analytic_threshold(fn, alpha) for fn in fns])
    if taus.max() - taus.min() > 1e-9:
        raise ValueError(f"candidates do not share a threshold: {taus}")
    derivs = np.array([fn.h_prime(-alpha / 2.0) for fn in fns])
    return int(np.argmax(derivs))
