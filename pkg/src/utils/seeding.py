"""Master-seed derived random streams."""

from typing import Tuple

import numpy as np


def replica_seed_sequence(master_seed: int, replica: int) -> np.random.SeedSequence:
    """Seed sequence of one replica; the spawn key records the replica index."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(replica,))


def replica_rng(master_seed: int, replica: int) -> np.random.Generator:
    """Independent generator for a replica, reproducible from (master_seed, replica)."""
    return np.random.default_rng(replica_seed_sequence(master_seed, replica))


def seed_to_int(master_seed: int, replica: int) -> int:
    """64-bit integer seed for objects (field samples) that store a single seed."""
    state = replica_seed_sequence(master_seed, replica).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def stream_id(master_seed: int, replica: int) -> Tuple[int, Tuple[int, ...]]:
    """The (entropy, spawn_key) pair persisted in every record."""
    seq = replica_seed_sequence(master_seed, replica)
    return int(seq.entropy), tuple(int(k) for k in seq.spawn_key)
