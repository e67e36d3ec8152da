"""Post-training score transformation: rank against a holdout, then squash.

The rank stage maps a score to r/N where r counts holdout scores strictly
below it plus a uniform tie randomizer over {0, ..., #ties}, so for scores
drawn i.i.d. with the holdout the output is uniform on the N+1 atoms
{0, 1/N, ..., 1}. The sigmoid stage then flattens the score distribution
away from the target coverage level, which is what shrinks the coverage gap
of inflated-threshold prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream


def logistic(z):
    """Numerically stable logistic function 1 / (1 + exp(-z))."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out) if np.ndim(z) == 0 else out


@dataclass(frozen=True)
class PTTParams:
    """Holdout score list plus the sigmoid offset/temperature.

    Defaults b = 0.9 and T = 1/400 follow the usual operating point of the
    transform (b at the target coverage level, T small).
    """

    holdout_scores: np.ndarray  # sorted ascending
    b: float = 0.9
    temperature: float = 1.0 / 400.0
    seed: int = 0

    def __post_init__(self):
        scores = np.sort(np.asarray(self.holdout_scores, dtype=float))
        if scores.size < 1:
            raise ValueError("holdout must contain at least one score")
        if not np.all(np.isfinite(scores)):
            raise ValueError("holdout scores must be finite")
        if not 0.0 < self.b < 1.0:
            raise ValueError(f"b must lie in (0, 1), got {self.b}")
        if not self.temperature > 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        object.__setattr__(self, "holdout_scores", scores)

    @property
    def n_holdout(self) -> int:
        return self.holdout_scores.size


def rank_transform(s: float, params: PTTParams, tie_rng: np.random.Generator) -> float:
    """Randomized holdout rank of a single score, as a fraction of N.

    r = #{holdout < s} + U with U uniform on {0, ..., #{holdout == s}}, so
    the result lives on the lattice {0, 1/N, ..., 1}.
    """
    if not np.isfinite(s):
        raise ValueError("score must be finite")
    h = params.holdout_scores
    lo = int(np.searchsorted(h, s, side="left"))
    hi = int(np.searchsorted(h, s, side="right"))
    r = lo + (int(tie_rng.integers(0, hi - lo + 1)) if hi > lo else 0)
    return r / params.n_holdout


def rank_transform_batch(values, params: PTTParams, tie_rng: np.random.Generator) -> np.ndarray:
    """Vectorized rank transform over an array of scores (any shape)."""
    v = np.asarray(values, dtype=float)
    h = params.holdout_scores
    lo = np.searchsorted(h, v.ravel(), side="left")
    hi = np.searchsorted(h, v.ravel(), side="right")
    ties = hi - lo
    r = lo.astype(float)
    tied = ties > 0
    if tied.any():
        r[tied] += tie_rng.integers(0, ties[tied] + 1)
    return (r / params.n_holdout).reshape(v.shape)


def sigmoid_transform(s, b: float, temperature: float):
    """Logistic squashing ``phi((s - b) / T)``; strictly increasing in s."""
    if not temperature > 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return logistic((np.asarray(s, dtype=float) - b) / temperature)


def ptt_score(s: float, params: PTTParams, tie_rng: np.random.Generator) -> float:
    """Rank-then-sigmoid transform of one base score; output in (0, 1)."""
    return float(sigmoid_transform(rank_transform(s, params, tie_rng), params.b, params.temperature))


def ptt_scores(values, params: PTTParams) -> np.ndarray:
    """Transform a 1-D list of query scores, tie stream keyed per query index."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    for i, s in enumerate(v):
        out[i] = ptt_score(float(s), params, stream(params.seed, "ptt-tie", i))
    return out


def ptt_score_fn(base_fn, params: PTTParams):
    """Wrap a score function so its outputs pass through the transform.

    The output stays inside (0, 1) (up to float saturation of the sigmoid),
    so the wrapped score remains a valid smoothing base score. Ties, if any,
    consume draws from the caller-provided generator.
    """

    def fn(X, rng):
        base = np.asarray(base_fn(X, rng), dtype=float)
        ranked = rank_transform_batch(base, params, rng)
        return sigmoid_transform(ranked, params.b, params.temperature)

    return fn


def fit_ptt_params(
    holdout_scores, b: float = 0.9, temperature: float = 1.0 / 400.0, seed: int = 0
) -> PTTParams:
    """Sort and freeze the holdout scores into transform parameters."""
    return PTTParams(holdout_scores=holdout_scores, b=b, temperature=temperature, seed=seed)
