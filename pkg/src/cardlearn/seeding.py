"""One global seed, with per-component seeds derived by hashing component names."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *names) -> int:
    text = "/".join([str(int(seed))] + [str(n) for n in names])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def rng_for(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *names))
