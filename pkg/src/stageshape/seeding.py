"""Deterministic seed derivation.

Every PRNG stream in the package is seeded from a base seed plus a label
path, so runs never depend on global random state.
"""

from __future__ import annotations

import hashlib


def derive_seed(base_seed: int, *labels: object) -> int:
    """Map a base seed and a label path to a stable unsigned 64-bit seed."""
    text = ":".join([str(int(base_seed)), *(str(label) for label in labels)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big", signed=False)
