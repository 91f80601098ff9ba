"""Counter-based random streams.

Every stochastic routine draws from a Philox stream keyed by
``(master seed, purpose)`` and advanced to a per-scenario offset, so results
are reproducible and independent of execution order or worker count.
"""
from __future__ import annotations

import numpy as np

_PURPOSES = {
    "factor": 1,
    "clock": 2,
    "jump": 3,
    "moment": 4,
    "synth": 5,
    "noise": 6,
    "start": 7,
}

#: counter budget reserved per scenario index within a stream
_STRIDE = 1 << 64


def substream(seed: int, index: int, purpose: str) -> np.random.Generator:
    """Generator for scenario ``index`` within the named purpose stream."""
    bitgen = np.random.Philox(key=[int(seed) & (2**64 - 1), _PURPOSES[purpose]])
    bitgen.advance(int(index) * _STRIDE)
    return np.random.Generator(bitgen)
