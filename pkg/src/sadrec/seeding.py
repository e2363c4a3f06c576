"""Named random substreams derived from one 64-bit seed.

Every random component of the package (initialization, negative sampling,
LOO splitting, Gibbs sweeps, ...) pulls its generator from here, so runs
are reproducible component-by-component from a single seed.
"""

import numpy as np

# Stable ids; never renumber, or old seeds stop reproducing.
_STREAM_IDS = {
    "init": 1,
    "negative": 2,
    "gibbs": 3,
    "split": 4,
    "simulate": 5,
    "mask": 6,
    "eval": 7,
}

_U64 = (1 << 64) - 1


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for the named substream of `seed`.

    Extra `indices` fan one stream out further (e.g. one mask stream per
    missing-fraction cell).
    """
    if name not in _STREAM_IDS:
        raise KeyError(f"unknown random stream {name!r}")
    key = (_STREAM_IDS[name],) + tuple(int(ix) & _U64 for ix in indices)
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed) & _U64, spawn_key=key)
    )
