"""Deterministic random streams.

Every stochastic stage of the pipeline (surface sampling, needle offsets,
free-space samples, weight init) draws from its own named substream of a
single master seed.  Streams are independent of each other and of call
order, so changing how many points one stage draws never shifts another
stage's values.
"""

from __future__ import annotations

import hashlib

import numpy as np

# canonical stream names used across the package
SURFACE_SAMPLING = "surface-sampling"
NEEDLE_OFFSETS = "needle-offsets"
SPACE_SAMPLES = "space-samples"
MODEL_INIT = "model-init"


def _token(part) -> int:
    """Map one path element to a 64-bit integer for SeedSequence entropy."""
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for one named purpose under a master seed.

    `path` is a sequence of strings and/or integers naming the purpose,
    e.g. ``substream(seed, "needle-offsets", iteration)``.  Equal paths
    give bit-identical streams; distinct paths give independent ones.
    """
    if not path:
        raise ValueError("substream needs at least one path element")
    entropy = [_token(seed)] + [_token(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))
