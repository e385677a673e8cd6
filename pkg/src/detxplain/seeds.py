"""Deterministic seed derivation.

One master seed drives a whole run. Every randomized stage (scene synthesis,
mask sampling, surrogate sampling, baselines) derives its own sub-seed from
the master seed plus a string path, so any single stage can be reproduced in
isolation and results do not depend on execution order or worker count.
"""

import hashlib

import numpy as np


def derive_seed(master: int, *path: object) -> int:
    """Map (master, path...) to a stable 63-bit seed via SHA-256."""
    text = str(int(master)) + "/" + "/".join(str(p) for p in path)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def derive_rng(master: int, *path: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *path))
