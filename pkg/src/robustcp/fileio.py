"""Text formats for score tensors, labels, artifacts, sets, and reports.

The score-samples format is line oriented and versioned:

    RCPS1 <n> <K> <N_MC> <sigma>
    <N_MC floats for example 0, class 0>
    ...                  (K lines per example, n blocks)

Labels live in a sibling file, one 0-based integer per line. Calibration
artifacts, prediction sets, and reports are JSON; the threshold's infinite
sentinel is an explicit ``{"finite": false}`` state so round trips never
touch a float infinity.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict

import numpy as np

from .calibrate import PredictionSet, Threshold
from .errors import ParseError
from .robust import CalibrationArtifact
from .smoothing import ScoreSamples

SCORE_MAGIC = "RCPS1"
CELL_WARN_LIMIT = 10**8


def save_scores(samples: ScoreSamples, path) -> None:
    n, K, n_mc = samples.values.shape
    if samples.values.size > CELL_WARN_LIMIT:
        warnings.warn(
            f"writing {samples.values.size} cells as text; consider fewer draws",
            stacklevel=2,
        )
    with open(path, "w") as fh:
        fh.write(f"{SCORE_MAGIC} {n} {K} {n_mc} {samples.sigma!r}\n")
        for i in range(n):
            for k in range(K):
                fh.write(" ".join(repr(v) for v in samples.values[i, k]) + "\n")


def load_scores(path, seed: int = 0) -> ScoreSamples:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: line 1: empty file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != SCORE_MAGIC:
        raise ParseError(f"{path}: line 1: expected '{SCORE_MAGIC} n K N_MC sigma'")
    try:
        n, K, n_mc = int(head[1]), int(head[2]), int(head[3])
        sigma = float(head[4])
    except ValueError as exc:
        raise ParseError(f"{path}: line 1: bad header field ({exc})") from exc
    expected = 1 + n * K
    if len(lines) < expected:
        raise ParseError(
            f"{path}: line {len(lines) + 1}: expected {expected} lines, found {len(lines)}"
        )
    values = np.empty((n, K, n_mc))
    for i in range(n):
        for k in range(K):
            ln = 1 + i * K + k
            fields = lines[ln].split()
            if len(fields) != n_mc:
                raise ParseError(
                    f"{path}: line {ln + 1}: expected {n_mc} values, found {len(fields)}"
                )
            try:
                values[i, k] = [float(f) for f in fields]
            except ValueError as exc:
                raise ParseError(f"{path}: line {ln + 1}: bad float ({exc})") from exc
    return ScoreSamples(values=values, sigma=sigma, seed=seed)


def save_labels(labels, path) -> None:
    with open(path, "w") as fh:
        for y in np.asarray(labels, dtype=int):
            fh.write(f"{int(y)}\n")


def load_labels(path) -> np.ndarray:
    out = []
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                out.append(int(raw))
            except ValueError as exc:
                raise ParseError(f"{path}: line {ln}: expected an integer label") from exc
    return np.asarray(out, dtype=int)


def _threshold_to_dict(tau: Threshold) -> dict:
    return {
        "finite": not tau.is_infinite,
        "value": tau.value,
        "level": tau.level,
        "n_cal": tau.n_cal,
    }


def _threshold_from_dict(d: dict) -> Threshold:
    value = d["value"] if d["finite"] else None
    return Threshold(value=value, level=d["level"], n_cal=d["n_cal"])


def artifact_to_dict(art: CalibrationArtifact) -> dict:
    d = asdict(art)
    d["tau"] = _threshold_to_dict(art.tau)
    d["tau_mc"] = _threshold_to_dict(art.tau_mc)
    return d


def artifact_from_dict(d: dict) -> CalibrationArtifact:
    kwargs = dict(d)
    kwargs["tau"] = _threshold_from_dict(d["tau"])
    kwargs["tau_mc"] = _threshold_from_dict(d["tau_mc"])
    return CalibrationArtifact(**kwargs)


def save_artifact(art: CalibrationArtifact, path) -> None:
    with open(path, "w") as fh:
        json.dump(artifact_to_dict(art), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_artifact(path) -> CalibrationArtifact:
    with open(path) as fh:
        try:
            return artifact_from_dict(json.load(fh))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"{path}: not a calibration artifact ({exc})") from exc


def save_sets(sets: list[PredictionSet], path) -> None:
    payload = [
        {"included": [int(i) for i in s.labels()], "scores": list(map(float, s.per_label_score))}
        for s in sets
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_sets(path) -> list[PredictionSet]:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: bad JSON ({exc})") from exc
    out = []
    for entry in payload:
        scores = np.asarray(entry["scores"], dtype=float)
        mask = np.zeros(scores.size, dtype=bool)
        mask[np.asarray(entry["included"], dtype=int)] = True
        out.append(PredictionSet(included=mask, per_label_score=scores))
    return out
