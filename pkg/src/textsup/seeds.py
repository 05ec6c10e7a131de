"""Deterministic seed derivation.

One user-facing seed fans out to named sub-seeds so that, say, re-seeding
the random channel selection cannot perturb projector initialization. The
derivation is the first 8 bytes (big-endian) of sha256("<seed>:<label>"),
reduced mod 2**32 so the result fits every RNG constructor we use.
"""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**32)
