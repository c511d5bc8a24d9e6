"""Deterministic seed derivation.

One master seed drives every random choice in a run. Child generators are
derived from the master seed plus a path of tags (stage name, then integer
indices such as template index or pose index), so any stage can be rerun in
isolation and still produce the same stream it would inside the full run.

Scheme: string tags are mapped to 32-bit ints with crc32; the tag tuple
becomes the ``spawn_key`` of a ``numpy.random.SeedSequence`` whose entropy is
the master seed.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        if tag < 0:
            raise ValueError(f"seed path tags must be non-negative, got {tag}")
        return int(tag)
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    raise TypeError(f"seed path tags must be int or str, got {type(tag).__name__}")


def child_sequence(master_seed: int, *path) -> np.random.SeedSequence:
    """SeedSequence for the child stream identified by ``path`` under ``master_seed``."""
    return np.random.SeedSequence(entropy=int(master_seed),
                                  spawn_key=tuple(_tag_to_int(t) for t in path))


def derive_rng(master_seed: int, *path) -> np.random.Generator:
    """Generator for the child stream identified by ``path`` under ``master_seed``."""
    return np.random.default_rng(child_sequence(master_seed, *path))
