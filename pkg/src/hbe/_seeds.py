"""Counter-based derivation of independent RNG streams.

Every randomized component receives a stream derived from
(master_seed, component_tag, index).  Streams are stable: adding more
tables or queries never perturbs existing ones.
"""

from __future__ import annotations

import numpy as np

_TAGS = {
    "table": 1,
    "query": 2,
    "bench": 3,
    "kmvm": 4,
    "verify": 5,
    "collision": 6,
}


def derive_rng(master_seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Independent Generator for (master_seed, tag, index)."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(_TAGS[tag], int(index)))
    return np.random.default_rng(ss)
