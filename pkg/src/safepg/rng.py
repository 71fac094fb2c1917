"""Counter-based random streams keyed by (seed, purpose, index).

Every episode draws from its own Philox stream, so a run's randomness does not
depend on the order in which episodes are simulated.
"""

from __future__ import annotations

import numpy as np

TRAIN = 0
EVAL = 1
DEMO = 2


def stream(seed: int, purpose: int, index: int) -> np.random.Generator:
    """Independent generator for episode ``index`` of the given purpose."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be nonnegative")
    ss = np.random.SeedSequence([int(seed), int(purpose), int(index)])
    return np.random.Generator(np.random.Philox(ss))
