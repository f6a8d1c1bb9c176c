"""Reproducible random-stream derivation.

All randomness flows through counter-based Philox4x64 generators keyed by a
user seed plus an integer namespace path, so any component can be re-run in
isolation (or in parallel, in any order) and reproduce bit-identical draws on
every platform.
"""

from __future__ import annotations

import numpy as np

# Namespace tags; a stream is identified by (seed, TAG, *indices).
COVARIATES = 1
EPIDEMIC = 2
UNDERREPORT = 3
E_STEP = 4
BOOTSTRAP = 5
REPLICATION = 6
BASELINE = 7


def substream(seed: int, *path: int) -> np.random.Generator:
    """Philox generator for the named (seed, *path) stream."""
    seq = np.random.SeedSequence((int(seed),) + tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(seq))
