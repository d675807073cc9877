"""Deterministic RNG derivation.

Every stochastic component derives its generator from an explicit integer
path rooted at the run seed, so results are independent of execution
order and identical across reruns.
"""

from __future__ import annotations

import numpy as np

# Fixed stream tags keep unrelated consumers of the same run seed from
# colliding even when their index tuples overlap.
STREAM_POOL = 11
STREAM_FILTER = 12
STREAM_SPLIT = 13
STREAM_TEACHER_GEN = 21
STREAM_REWARD_QUESTIONS = 22
STREAM_INNER = 23
STREAM_LEARNABILITY = 24
STREAM_STUDENT_TRAIN = 31
STREAM_EVAL = 32
STREAM_SAMPLE = 41


def derive_rng(*path: int) -> np.random.Generator:
    """Generator for an integer path, e.g. ``derive_rng(seed, tag, step, k, j)``."""
    if not path:
        raise ValueError("seed path must be nonempty")
    seq = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in path])
    return np.random.Generator(np.random.PCG64(seq))
