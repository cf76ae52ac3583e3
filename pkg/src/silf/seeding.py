"""Named random streams derived from a single root seed.

Every random draw in a run flows through here.  A stream is addressed by a
root seed plus a tuple of labels (for example ``("task", 3, "train-initial")``),
so adding or removing a task never perturbs the draws any other stream sees.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEP = "\x1f"


def _digest_words(labels: tuple[object, ...]) -> list[int]:
    text = _SEP.join(str(label) for label in labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]


def stream(seed: int, *labels: object) -> np.random.Generator:
    """Return a Generator for the stream named by ``labels`` under ``seed``."""
    if seed < 0:
        raise ValueError("root seed must be non-negative")
    entropy = [seed] + _digest_words(labels)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def child_seed(seed: int, *labels: object) -> int:
    """Derive a 63-bit integer seed for a named child (e.g. a task dataset)."""
    if seed < 0:
        raise ValueError("root seed must be non-negative")
    words = _digest_words((seed,) + labels)
    return (words[0] ^ words[1]) & (2**63 - 1)
