"""Named random sub-streams derived from one top-level seed."""

import hashlib

import numpy as np


def stream_seed(seed: int, name: str) -> int:
    h = hashlib.blake2b(f"{int(seed)}/{name}".encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for stage ``name``; other stages' draws are unaffected by it."""
    return np.random.default_rng(stream_seed(seed, name))
