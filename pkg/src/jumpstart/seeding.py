"""Seed fan-out: one 64-bit run seed feeds independent named substreams.

Stream ``name`` of seed ``s`` is ``SeedSequence([s, STREAMS[name]])``, so adding
evaluation episodes never shifts the training stream and vice versa.
"""
from __future__ import annotations

import numpy as np

STREAMS = {"env": 0, "demos": 1, "training": 2, "evaluation": 3, "guide": 4}


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name]]))


def derive_seed(seed: int, name: str) -> int:
    """A plain integer seed for APIs that take one (e.g. environment builders)."""
    state = np.random.SeedSequence([int(seed), STREAMS[name]]).generate_state(1, np.uint64)[0]
    return int(state) & (2**63 - 1)
