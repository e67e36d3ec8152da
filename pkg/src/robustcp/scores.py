"""Base nonconformity scores and the pluggable-classifier boundary.

A *classifier* is any callable mapping an (m, d) input batch to an (m, K)
array of class probabilities (rows sum to 1). Labels are 0-based
everywhere. Smaller score = more conforming.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, TrainingDivergedError
from .rng import stream

PROB_SUM_TOL = 1e-6


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with integer labels in [0, n_classes)."""

    inputs: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=float))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a 2-D array")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels must be one integer per input row")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError("labels out of range")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.inputs[idx], self.labels[idx], self.n_classes)


def validate_prob_matrix(probs: np.ndarray) -> np.ndarray:
    """Check that every row is a probability vector; name the offending row."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2 or probs.shape[1] < 2:
        raise DataError(f"probability output must be (n, K) with K >= 2, got {probs.shape}")
    bad = ~np.isfinite(probs).all(axis=1)
    bad |= (probs < 0.0).any(axis=1) | (probs > 1.0).any(axis=1)
    bad |= np.abs(probs.sum(axis=1) - 1.0) > PROB_SUM_TOL
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataError(f"row {row} is not a probability vector: {probs[row]}")
    return probs


def _validate_prob_vector(p) -> np.ndarray:
    return validate_prob_matrix(np.asarray(p, dtype=float)[None, :])[0]


def hps_score(p, y: int) -> float:
    """Homogeneous prediction score: one minus the probability of class y."""
    p = _validate_prob_vector(p)
    if not 0 <= y < p.size:
        raise ValueError(f"class index {y} out of range for {p.size} classes")
    return float(1.0 - p[y])


def aps_score(p, y: int, u: float) -> float:
    """Adaptive prediction score: mass of classes at least as probable as y
    (excluding y itself), plus ``p[y] * u`` for the uniform draw ``u``.

    Classes tied with ``p[y]`` contribute fully; only class y itself enters
    through the randomized term.
    """
    p = _validate_prob_vector(p)
    if not 0 <= y < p.size:
        raise ValueError(f"class index {y} out of range for {p.size} classes")
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    mass_ge = float(p[p >= p[y]].sum() - p[y])
    return mass_ge + float(p[y]) * float(u)


def hps_matrix(probs: np.ndarray) -> np.ndarray:
    return 1.0 - validate_prob_matrix(probs)


def aps_matrix(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized APS over an (m, K) probability matrix with per-cell u draws.

    O(m * K^2) memory; fine at the class counts this package targets.
    """
    probs = validate_prob_matrix(probs)
    u = np.asarray(u, dtype=float)
    if u.shape != probs.shape:
        raise ValueError("u must match the probability matrix shape")
    ge = probs[:, None, :] >= probs[:, :, None]  # ge[i, k, j] = p_ij >= p_ik
    mass_ge = np.einsum("ikj,ij->ik", ge, probs) - probs
    return mass_ge + probs * u


def hps_score_fn(classifier):
    """Score function (X, rng) -> HPS matrix for a probability classifier."""

    def fn(X, rng=None):
        return hps_matrix(classifier(X))

    return fn


def aps_score_fn(classifier):
    """Score function (X, rng) -> APS matrix; u drawn per cell from ``rng``."""

    def fn(X, rng):
        probs = validate_prob_matrix(classifier(X))
        return aps_matrix(probs, rng.random(probs.shape))

    return fn


def score_matrix(classifier, data: LabeledDataset, score: str = "hps", seed: int = 0) -> np.ndarray:
    """Base scores of every class for every example: entry (i, k) = S(x_i, k).

    For APS, the uniform draw for cell (i, k) comes from the stream keyed
    ``(seed, "aps-u", i)`` (k-th draw of the example's stream), so results do
    not depend on evaluation order and HPS output is unaffected by the seed.
    """
    if score not in ("hps", "aps"):
        raise ValueError(f"unknown score {score!r}")
    if data.n == 0:
        return np.zeros((0, data.n_classes))
    probs = validate_prob_matrix(classifier(data.inputs))
    if probs.shape != (data.n, data.n_classes):
        raise DataError(
            f"classifier returned shape {probs.shape}, expected {(data.n, data.n_classes)}"
        )
    if score == "hps":
        return 1.0 - probs
    u = np.stack([stream(seed, "aps-u", i).random(data.n_classes) for i in range(data.n)])
    return aps_matrix(probs, u)


@dataclass
class LinearSoftmaxModel:
    """Linear-softmax (multinomial logistic) classifier."""

    weights: np.ndarray  # (K, d)
    bias: np.ndarray  # (K,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("model parameters must be finite")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ self.weights.T + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(X))

    def __call__(self, X) -> np.ndarray:
        return self.predict_proba(X)

    def copy(self) -> "LinearSoftmaxModel":
        return LinearSoftmaxModel(self.weights.copy(), self.bias.copy())


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class TrainConfig:
    """Full-batch gradient-descent settings for the blob classifier."""

    learning_rate: float = 0.5
    epochs: int = 500
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


def train_blob_classifier(data: LabeledDataset, config: TrainConfig = TrainConfig()) -> LinearSoftmaxModel:
    """Fit a linear-softmax classifier by full-batch gradient descent.

    Weights start at zero (zero epochs therefore yields the uniform
    predictor) and the run is deterministic. Single-class data is accepted:
    gradient descent simply drives all mass onto that class.
    """
    if data.n < data.n_classes:
        raise ValueError(f"need at least {data.n_classes} examples, got {data.n}")
    K, d = data.n_classes, data.inputs.shape[1]
    model = LinearSoftmaxModel(np.zeros((K, d)), np.zeros(K))
    onehot = np.eye(K)[data.labels]
    for epoch in range(config.epochs):
        probs = model.predict_proba(data.inputs)
        loss = -np.mean(np.log(np.clip(probs[np.arange(data.n), data.labels], 1e-300, None)))
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        g = (probs - onehot) / data.n
        grad_w = g.T @ data.inputs + config.weight_decay * model.weights
        grad_b = g.sum(axis=0)
        model.weights = model.weights - config.learning_rate * grad_w
        model.bias = model.bias - config.learning_rate * grad_b
    return model


@dataclass(frozen=True)
class BlobSpec:
    """Isotropic Gaussian blobs, one per class, centers on a circle."""

    n_train: int = 300
    n_eval: int = 600
    n_classes: int = 3
    dim: int = 2
    center_scale: float = 2.0
    cluster_std: float = 0.8

    def __post_init__(self):
        if self.n_classes < 2 or self.dim < 1:
            raise ValueError("need n_classes >= 2 and dim >= 1")
        if self.cluster_std <= 0 or self.center_scale <= 0:
            raise ValueError("center_scale and cluster_std must be positive")

    def centers(self) -> np.ndarray:
        angles = 2.0 * np.pi * np.arange(self.n_classes) / self.n_classes
        c = np.zeros((self.n_classes, self.dim))
        c[:, 0] = self.center_scale * np.cos(angles)
        if self.dim > 1:
            c[:, 1] = self.center_scale * np.sin(angles)
        return c


def make_blobs(spec: BlobSpec, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic (train, eval) blob datasets keyed by the seed."""
    centers = spec.centers()

    def draw(tag: str, n: int) -> LabeledDataset:
        g = stream(seed, "blobs", tag)
        labels = g.integers(0, spec.n_classes, size=n)
        X = centers[labels] + spec.cluster_std * g.standard_normal((n, spec.dim))
        return LabeledDataset(X, labels, spec.n_classes)

    return draw("train", spec.n_train), draw("eval", spec.n_eval)
