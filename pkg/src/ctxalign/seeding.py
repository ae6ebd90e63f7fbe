"""Deterministic RNG substreams.

Every random choice in the package flows from a single top-level seed.
Each pipeline stage draws from its own named substream so that, e.g.,
changing the number of EM iterations cannot perturb the training batches.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named substream of ``seed``.

    The stream key is a CRC32 of the name, which is stable across runs,
    platforms and Python versions (unlike ``hash``).
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence((seed, key)))
