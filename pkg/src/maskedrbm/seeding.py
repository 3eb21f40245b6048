"""Stable seed derivation so every stage of a run is independently replayable."""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Collision-resistant 63-bit seed from a tuple of primitives.

    Floats are rendered with repr so derived seeds are stable across runs and
    platforms (unlike the builtin hash).
    """
    text = "|".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1
