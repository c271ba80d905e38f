"""Seed derivation and deterministic-mode helpers.

All randomness in the package flows from explicit integer seeds through
`numpy.random.Generator(PCG64)`. Sub-streams (per task, per iteration) are
derived with `derive_seed`, which mixes a root seed with integer counters via
`numpy.random.SeedSequence`, so parallel and sequential schedules draw
identical numbers.
"""

from __future__ import annotations

import os

import numpy as np

DETERMINISTIC_ENV = "MLSR_DETERMINISTIC"


def derive_seed(root: int, *counters: int) -> int:
    """Mix a root seed with counters into a new 64-bit seed.

    Stable across runs and platforms (SeedSequence's mixing is part of
    numpy's documented API).
    """
    words = np.random.SeedSequence((int(root),) + tuple(int(c) for c in counters)).generate_state(2)
    return int(words[0]) | (int(words[1]) << 32)


def rng_for(root: int, *counters: int) -> np.random.Generator:
    """A fresh PCG64 generator for the given (root, counters) stream."""
    return np.random.default_rng(derive_seed(root, *counters))


def deterministic_mode() -> bool:
    """True when MLSR_DETERMINISTIC=1 requests bit-reproducible artifacts.

    Library math is deterministic regardless; the flag additionally forces
    sequential benchmark execution and blanks wall-clock columns in reports
    so repeated runs produce identical bytes.
    """
    return os.environ.get(DETERMINISTIC_ENV, "") == "1"
