"""Deterministic RNG derivation.

All randomness flows from one root seed through named sub-streams so that
worlds, data, training, and evaluation can be re-derived independently.
"""

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def subseed(root_seed: int, name: str) -> np.random.SeedSequence:
    """Named child seed sequence; stable across platforms and runs."""
    return np.random.SeedSequence(entropy=[int(root_seed) & 0xFFFFFFFFFFFFFFFF, _name_key(name)])


def generator(root_seed: int, name: str, index: int | None = None) -> np.random.Generator:
    """PCG64 generator for stream ``name`` (optionally ``name[index]``)."""
    if index is not None:
        name = f"{name}[{index}]"
    return np.random.Generator(np.random.PCG64(subseed(root_seed, name)))
