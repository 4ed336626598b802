"""Seeded, named random streams.

Every random draw in this package comes from a stream identified by a
64-bit seed plus a path of labels ("init", "dropout", "noise", ...).
Streams are backed by counter-based Philox generators keyed by a SHA-256
digest of (seed, path), so the same (seed, path) produces the same value
sequence on every platform, and distinct paths are statistically
independent.  Forking never mutates the parent stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, *parts) -> int:
    """Derive a child 64-bit seed from a master seed and a label path."""
    text = "|".join([str(int(master_seed))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _philox_key(seed: int, path: tuple) -> np.ndarray:
    text = "|".join([str(int(seed))] + [str(p) for p in path])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64).copy()


class RngStream:
    """A named random stream: (seed, label path) -> numpy Generator.

    The generator is single-owner mutable state; fork() returns an
    independent child stream without consuming from this one.
    """

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        self.generator = np.random.Generator(np.random.Philox(key=_philox_key(self.seed, self.path)))

    def fork(self, label) -> "RngStream":
        return RngStream(self.seed, self.path + (label,))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path!r})"


def stream(seed: int, *labels) -> RngStream:
    """Convenience constructor for a stream at (seed, labels)."""
    return RngStream(seed, tuple(labels))
