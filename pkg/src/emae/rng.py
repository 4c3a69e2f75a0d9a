"""Counter-based random streams.

Every stochastic consumer (mask draws, shuffles, parameter init, synthesis)
gets its own Philox stream keyed by (user seed, stream tag). Philox is
counter-based, so a (seed, counter) pair fully determines a stream without
any shared mutable state, which is what makes runs bit-reproducible.
"""

from __future__ import annotations

import numpy as np

# Stream tags. Each tag selects an independent substream for one seed.
STREAM_MASK = 1
STREAM_VAL_MASK = 2
STREAM_SHUFFLE = 3
STREAM_INIT = 4
STREAM_HEAD_INIT = 5
STREAM_SPLIT = 6
STREAM_SYNTH = 7

_MASK64 = (1 << 64) - 1


def generator(seed: int, stream: int = 0, counter: int = 0) -> np.random.Generator:
    """Return a Generator for substream `stream` of `seed` at `counter`.

    The counter occupies the top 128 bits of Philox's 256-bit block counter,
    so each counter value owns a disjoint 2**128-block region of the stream.
    """
    if counter < 0:
        raise ValueError(f"counter must be non-negative, got {counter}")
    key = (int(seed) & _MASK64) | (int(stream) << 64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter << 128))
