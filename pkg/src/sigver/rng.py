"""Deterministic random-stream fan-out.

Every randomized stage of the pipeline (synthesis, splitting, weight init,
batch sampling, pair subsampling, ...) draws from its own generator derived
from the single run seed plus a stage label.  Streams are therefore stable
against changes in the order or number of draws made by other stages.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *labels) -> np.random.Generator:
    """Generator for stage ``labels`` under the given run seed.

    Labels may be strings (hashed with crc32) or integers (used directly),
    e.g. ``substream(seed, "batch", epoch, step)``.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    key = []
    for label in labels:
        if isinstance(label, str):
            key.append(zlib.crc32(label.encode("utf-8")))
        elif isinstance(label, (int, np.integer)):
            if label < 0:
                raise ValueError(f"integer labels must be non-negative, got {label}")
            key.append(int(label))
        else:
            raise TypeError(f"label must be str or int, got {type(label).__name__}")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))
