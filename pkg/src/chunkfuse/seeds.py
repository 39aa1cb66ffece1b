"""Deterministic named substreams from one root seed.

Every random decision in an experiment (splitting, weight init, batch
shuffling, per-member training seeds) draws from its own child seed, so
changing one consumer never perturbs the others and any single stage can
be reproduced in isolation.
"""

from __future__ import annotations

import hashlib


def child_seed(seed: int, name: str) -> int:
    """Stable 63-bit seed for the named substream of ``seed``."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1
