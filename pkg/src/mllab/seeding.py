"""Deterministic seed derivation for independent random streams."""

import hashlib


def derive_seed(seed, stream):
    """Stable 64-bit sub-seed for the named stream of a master seed.

    Hash-based so the mapping is identical across platforms and numpy
    versions; every consumer of randomness in a run pulls its own
    stream through this function.
    """
    digest = hashlib.sha256(f"{int(seed)}/{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
