"""Named, independent RNG streams derived from one master seed.

Each component (environment, policy sampling, epsilon-greedy, encoder, random
scheduler) draws from its own stream, so toggling one component never
perturbs another's randomness. Stream derivation is stable across platforms
and sessions: the name is hashed with SHA-256 into the seed sequence.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name):
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(master_seed, name):
    """Independent Generator for (master_seed, name)."""
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed) & ((1 << 63) - 1), _name_key(name)])
    )


def derived_seed(master_seed, name):
    """Stable integer sub-seed, e.g. for environment reset."""
    return int(stream(master_seed, name).integers(1 << 62))
