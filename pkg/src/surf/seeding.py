"""Hierarchical seed derivation.

Every random draw in the package goes through :func:`rng`, keyed by the master
seed plus a purpose tag and indices, so data, initialization and batch
sampling stay independently reproducible.
"""

from __future__ import annotations

import numpy as np

# purpose tags
DATA = 1
INIT = 2
W0 = 3
BATCH = 4
PICK = 5
STALE = 6
BASELINE = 7
MEANS = 8
GRAPH = 9


def rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


def derive(seed: int, *keys: int) -> int:
    """Integer seed derived from ``seed`` and ``keys``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
