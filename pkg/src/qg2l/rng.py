"""Counter-based random streams keyed by (master seed, purpose, index).

Every trajectory draws from its own Philox stream, so ensemble results do not
depend on scheduling or on how trajectories are grouped into batches.
"""

import numpy as np

# purposes keep streams for different roles disjoint under one master seed
TRAJECTORY = 0
PAIR = 1
INITIAL = 2
ENSEMBLE_X = 3
ENSEMBLE_Y = 4
TAIL = 5
K0 = 6
GAP = 7
FIXED_PAIR = 8


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def streams(seed: int, purpose: int, indices) -> list[np.random.Generator]:
    return [stream(seed, purpose, i) for i in indices]
