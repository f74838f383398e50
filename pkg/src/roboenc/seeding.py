"""Deterministic seed derivation.

Every random choice in the library flows from a master seed through
`derive_seed(master, *labels)`. The labels name the consumer (component,
layer index, example index, ...), so adding a new consumer never perturbs
the streams of existing ones, and per-example work is independent of run
order.
"""

import hashlib

import numpy as np


def derive_seed(master: int, *labels) -> int:
    """Hash (master, labels...) into a uint64 sub-seed via SHA-256."""
    h = hashlib.sha256()
    h.update(int(master).to_bytes(8, "little", signed=False))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def rng(master: int, *labels) -> np.random.Generator:
    """Seeded generator for the stream named by `labels`."""
    return np.random.default_rng(derive_seed(master, *labels))
