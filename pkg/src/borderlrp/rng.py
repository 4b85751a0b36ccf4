"""Pinned pseudo-random streams.

Everything random in the package draws from Philox4x64-10, a counter-based
generator with published known-answer vectors. A stream is addressed by a
64-bit seed plus a 64-bit stream id, so per-video streams can be generated
independently and in any order.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# stream ids used across the package
STREAM_INIT = 0x1A17
STREAM_SHUFFLE = 0x5F0F
STREAM_VIDEO_BASE = 1 << 32


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=[seed & MASK64, stream & MASK64], counter=0)
    )


def box_muller(gen: np.random.Generator, shape) -> np.ndarray:
    """Standard normal samples via the basic Box-Muller transform."""
    n = int(np.prod(shape, dtype=np.int64))
    m = (n + 1) // 2
    u1 = 1.0 - gen.random(m)  # (0, 1]
    u2 = gen.random(m)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * m)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n].reshape(shape)
