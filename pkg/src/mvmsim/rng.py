"""Deterministic stream derivation for reproducible ensembles.

Every random draw in the package comes from a counter-based Philox
generator keyed by (seed, path_id, component tag).  Streams are
independent across paths and components, and a path's draws never depend
on how many other paths run or on which worker produced them, so
ensemble statistics are bit-identical across run orders and thread
counts.

Component tags (first tag word):
    0  Wiener increments
    1  jump arrivals, one substream per atom: (1, atom_index)
    2  initial condition draws
    3  auxiliary draws (scenario-specific)
"""

import numpy as np

TAG_WIENER = 0
TAG_JUMP = 1
TAG_INIT = 2
TAG_AUX = 3


def stream(seed, path_id, *tag):
    """Independent Generator for one (seed, path_id, component) triple."""
    key = np.random.SeedSequence(
        entropy=int(seed), spawn_key=tuple(int(t) for t in (path_id,) + tag)
    )
    return np.random.Generator(np.random.Philox(key))
