"""Named random sub-streams derived from one master seed.

Every randomized component (data order, dropout masks, UNK word dropout,
negative sampling, parameter init, synthetic generation) pulls from its own
named stream so perturbing one component never shifts the draws of another.
"""

from __future__ import annotations

import numpy as np

# Fixed registry: stream name -> child index under the master SeedSequence.
_STREAMS = {
    "init": 0,
    "data_order": 1,
    "dropout": 2,
    "word_dropout": 3,
    "negatives": 4,
    "synth": 5,
}


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the named generator for this master seed."""
    if name not in _STREAMS:
        raise KeyError(f"unknown random stream {name!r}; known: {sorted(_STREAMS)}")
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(_STREAMS))
    return np.random.Generator(np.random.PCG64(children[_STREAMS[name]]))


def streams(seed: int) -> dict[str, np.random.Generator]:
    """All named generators for this master seed."""
    return {name: stream(seed, name) for name in _STREAMS}
