"""Explicitly keyed counter-based random streams.

A stream is identified by ``(seed, *keys)`` so work split across frames or
purposes draws the same numbers regardless of evaluation order.
"""

from __future__ import annotations

import numpy as np


def rng(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)])
    return np.random.Generator(np.random.Philox(ss))
