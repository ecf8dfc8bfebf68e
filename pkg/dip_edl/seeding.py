"""Seeded random number generation.

All randomness in the package flows through numpy's ``PCG64`` bit generator
(a 128-bit-state permuted congruential generator seeded from a 64-bit value),
which produces the same stream on every platform.
"""

import numpy as np

from dip_edl.errors import DomainError

_MAX_SEED = 2**64


def check_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise DomainError(f"Seed must be an integer, got {seed!r}")
    if not 0 <= int(seed) < _MAX_SEED:
        raise DomainError(f"Seed must be a 64-bit unsigned integer, got {seed}")
    return int(seed)


def make_rng(seed: int, stream: int | None = None) -> np.random.Generator:
    """Generator for ``seed``; ``stream`` selects an independent sub-stream."""
    seed = check_seed(seed)
    entropy = [seed] if stream is None else [seed, stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, stream: int) -> int:
    """Independent 64-bit seed for a named sub-task (e.g. the test split)."""
    state = np.random.SeedSequence([check_seed(seed), stream]).generate_state(1, np.uint64)
    return int(state[0])
