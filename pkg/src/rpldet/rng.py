"""Named, isolated random substreams derived from one experiment seed.

Every consumer draws from its own substream, so skipping one pipeline
branch (an ablation arm) never shifts the draws seen by the others.
"""

from __future__ import annotations

import numpy as np

_STREAM_IDS = {
    "data": 0,
    "init": 1,
    "noise-weak": 2,
    "noise-strong": 3,
    "batch": 4,
}


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Generator for one named substream of the experiment seed."""
    if name not in _STREAM_IDS:
        raise ValueError(f"unknown substream {name!r}; known: {sorted(_STREAM_IDS)}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(_STREAM_IDS[name], int(index)))
    return np.random.default_rng(seq)
