"""Deterministic randomness.

Every random draw in the workbench flows from one explicit 64-bit master
seed through counter-based Philox streams.  Substreams are named, so two
runs with the same seed produce identical draws regardless of the order in
which components ask for their generators.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes | str) -> int:
    """64-bit FNV-1a hash."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def derive_rng(seed: int, *stream: object) -> np.random.Generator:
    """Generator for the substream named by ``stream`` under ``seed``.

    The stream labels are hashed, so any printable objects work as names.
    """
    spawn_key = tuple(fnv1a64(repr(part)) for part in stream)
    ss = np.random.SeedSequence(entropy=seed & _MASK64, spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))
