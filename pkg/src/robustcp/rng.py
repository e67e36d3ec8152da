"""Keyed, counter-based random streams.

Every random draw in the package comes from a Philox stream keyed by
``(seed, *path)`` where the path names the role and index of the consumer
(e.g. ``("mc-noise", example_index)``). Streams with different keys are
independent, and the value of a stream does not depend on the order in
which other streams are consumed, so example-parallel evaluation is
bit-identical to serial evaluation.
"""

from __future__ import annotations

import zlib

import numpy as np


def _spawn_key(path: tuple) -> tuple[int, ...]:
    key = []
    for part in path:
        if isinstance(part, str):
            key.append(zlib.crc32(part.encode("utf-8")))
        elif isinstance(part, (int, np.integer)):
            if part < 0:
                raise ValueError(f"stream path ints must be >= 0, got {part}")
            key.append(int(part))
        else:
            raise TypeError(f"stream path parts must be str or int, got {type(part)!r}")
    return tuple(key)


def stream(seed: int, *path) -> np.random.Generator:
    """Independent Philox generator keyed by ``(seed, *path)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=_spawn_key(path))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *path) -> int:
    """A derived integer seed, for APIs that take a seed rather than a stream."""
    return int(stream(seed, *path).integers(0, 2**63))
