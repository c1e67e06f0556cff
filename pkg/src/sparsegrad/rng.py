"""Named, counter-based random substreams.

Every random draw in this package comes from a Philox stream keyed by
(seed, *key), where the key encodes worker index and a purpose tag. This
keeps draw order independent of scheduling and makes every artifact
reproducible from its seed alone.
"""

from __future__ import annotations

import numpy as np

# Purpose tags for substream keys. Append only; renumbering breaks
# reproducibility of frozen datasets.
FEATURES = 0
MODEL_MEAN = 1
MODEL = 2
NOISE = 3
ORACLE = 4
SWEEP = 5


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return a generator for the substream identified by (seed, *key)."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(x) for x in key))
    return np.random.Generator(np.random.Philox(seq))
