"""Counter-based random streams.

Every stochastic routine in the package takes an explicit numpy Generator.
Monte Carlo drivers derive per-trial child generators from a master seed and
an integer path, so results do not depend on scheduling or worker count.
"""
import numpy as np


def substream(seed, *path):
    """Return a Generator for the child stream at integer ``path`` under ``seed``.

    The same (seed, path) always yields the same stream, and distinct paths
    yield statistically independent streams.
    """
    if any(p < 0 for p in path):
        raise ValueError("stream path entries must be nonnegative integers")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)
