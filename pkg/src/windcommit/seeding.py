"""Deterministic seed derivation for pipeline stages and parallel units.

Every random stream in the pipeline is derived from
``(master_seed, stage tag, unit index)`` through numpy's ``SeedSequence``,
whose mixing algorithm is stable across numpy releases.  The tag table below
is part of the output contract: renaming or renumbering a tag changes every
downstream artifact byte for byte.
"""

from __future__ import annotations

import numpy as np

STAGE_TAGS = {
    "exit-mass": 1,
    "fv": 2,
    "tree-benchmark": 3,
    "tree-biased": 4,
    "realization": 5,
}


def derive_seed(master_seed: int, stage: str, unit: int = 0) -> int:
    """64-bit seed for pipeline stage `stage`, parallel unit `unit`."""
    if master_seed < 0:
        raise ValueError(f"master_seed must be non-negative, got {master_seed}")
    if stage not in STAGE_TAGS:
        raise KeyError(f"unknown stage tag {stage!r}; known: {sorted(STAGE_TAGS)}")
    ss = np.random.SeedSequence((master_seed, STAGE_TAGS[stage], unit))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def derive_rng(master_seed: int, stage: str, unit: int = 0) -> np.random.Generator:
    """Generator seeded from (master_seed, stage tag, unit index)."""
    return np.random.default_rng(derive_seed(master_seed, stage, unit))
