"""Counter-based random streams for path simulation.

Every path owns a family of independent streams (Brownian increments, jump
epochs, jump sizes, thinning levels, marking uniforms, immigration epochs and
sizes), each keyed by ``(seed, path_index, stream)``.  Draw ``n`` of a stream
is a pure function of the key and ``n``, so paths can be regenerated or
distributed across workers without shared state, and the compiled kernel can
reproduce the exact same doubles with 64-bit integer arithmetic and libm.

The construction is SplitMix64: a chained avalanche mix derives the stream key
and output ``n`` is ``mix64(key + n * GAMMA)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

MASK64 = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15
_SEED_SALT = 0x6A09E667F3BCC909
TWO_PI = 6.283185307179586
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53

# stream ids, shared with the kernels
STREAM_BROWNIAN = 0
STREAM_JUMP_EPOCH = 1
STREAM_JUMP_SIZE = 2
STREAM_NU = 3
STREAM_MARK = 4
STREAM_IMM_EPOCH = 5
STREAM_IMM_SIZE = 6


def mix64(z: int) -> int:
    """SplitMix64 finalizer (Steele/Lea/Flood); bijective on 64-bit words."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, path_index: int, stream: int) -> int:
    """Derive the 64-bit key for one stream of one path."""
    z = mix64((seed * GAMMA + _SEED_SALT) & MASK64)
    z = mix64((z + path_index * GAMMA) & MASK64)
    return mix64((z + stream * GAMMA) & MASK64)


def u64_at(key: int, counter: int) -> int:
    """Raw 64-bit draw ``counter`` of the stream with the given key."""
    return mix64((key + counter * GAMMA) & MASK64)


@dataclass
class CounterStream:
    """Sequential view of one counter-based stream.

    Only a convenience wrapper: the counter is plain data and the draw at any
    position can be recomputed with :func:`u64_at`.
    """

    seed: int
    path_index: int
    stream: int
    counter: int = 0
    key: int = field(init=False)

    def __post_init__(self) -> None:
        self.key = stream_key(self.seed, self.path_index, self.stream)

    def next_u64(self) -> int:
        x = u64_at(self.key, self.counter)
        self.counter += 1
        return x

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def exponential(self) -> float:
        """Standard exponential via inverse CDF; 0.0 has probability 2**-53."""
        return -math.log1p(-self.uniform())

    def normal(self) -> float:
        # Box-Muller, cosine branch only. u1 is shifted into (0, 1] so the log
        # stays finite; the sine branch is discarded to keep the draw stateless.
        u1 = ((self.next_u64() >> 11) + 1) * _INV_2_53
        u2 = (self.next_u64() >> 11) * _INV_2_53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)
