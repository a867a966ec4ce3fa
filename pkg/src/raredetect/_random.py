"""Seeded random source shared by every randomized operation.

All randomness goes through :func:`make_rng`, which returns a
``numpy.random.Generator`` backed by the PCG64 bit generator. PCG64 produces
the same stream on every platform for a given seed, so splits, folds,
embeddings and synthetic data are reproducible from ``(inputs, seed)``.
"""

import numpy as np


def make_rng(seed):
    """Return a PCG64-backed generator for ``seed`` (an int or a sequence of ints)."""
    return np.random.Generator(np.random.PCG64(seed))
