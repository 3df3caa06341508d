"""Named random sub-streams derived from one top-level seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, stage: str, *ids: int) -> np.random.Generator:
    """Independent generator for ``(seed, stage, *ids)``.

    The stage name is hashed with crc32 so streams are stable across
    processes and Python hash randomization.
    """
    key = [int(seed), zlib.crc32(stage.encode("utf-8"))] + [int(i) for i in ids]
    return np.random.default_rng(np.random.SeedSequence(key))
