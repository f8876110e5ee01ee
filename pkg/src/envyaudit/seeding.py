"""Stable seed derivation.

Seeds are derived from a master seed and a tuple of labels with a
keyed hash, so a sub-stream depends only on its own labels and never on
scheduling order or on which other streams exist.
"""

import hashlib
import random


def derive_seed(master_seed: int, *labels) -> int:
    """64-bit seed from ``master_seed`` and ``labels``."""
    text = "|".join([str(int(master_seed))] + [str(x) for x in labels])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_rng(master_seed: int, *labels) -> random.Random:
    return random.Random(derive_seed(master_seed, *labels))
