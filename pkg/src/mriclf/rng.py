"""Seedable Philox substreams.

Each consumer asks for a named stream plus optional integer keys (iteration,
layer, step ...). Streams with different names or keys are statistically
independent, so adding draws in one consumer never shifts another.
"""

import zlib

import numpy as np

STREAMS = ("splits", "mixup", "valsplit", "synth", "dropout", "init", "bootstrap", "folds", "svm", "shuffle")


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    if name not in STREAMS:
        raise ValueError(f"unknown random stream {name!r}")
    tag = zlib.crc32(name.encode("ascii"))
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, tag, *(int(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit child seed for (seed, keys), e.g. one per CV iteration."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0] >> np.uint64(1))
