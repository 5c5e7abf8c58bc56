"""Deterministic 64-bit seed derivation.

Every random stream in the toolkit is seeded as ``master XOR splitmix64(index)``
so any single instance, episode, or rollout can be reproduced in isolation
from the master seed and its index. Disjoint index namespaces (high 16 bits)
keep unrelated streams from colliding.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """The splitmix64 finalizer: a well-mixed 64-bit hash of an integer."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(master: int, index: int) -> int:
    """Seed for item ``index``: ``master XOR splitmix64(index)``."""
    return (master ^ splitmix64(index & _MASK64)) & _MASK64


def derive_stream(master: int, namespace: int, index: int) -> int:
    """Namespaced variant; ``namespace`` occupies the high 16 bits of the index."""
    return derive_seed(master, ((namespace & 0xFFFF) << 48) | (index & ((1 << 48) - 1)))


# Stream namespaces. Namespace 0 is the public per-instance convention used
# by the generate command (seed_i = master XOR splitmix64(i)).
NS_INSTANCE = 0
NS_PARAM_INIT = 1
NS_EPISODE_RNG = 2
NS_EVAL_INIT = 3
NS_EVAL_INSTANCE = 4
NS_ROLLOUT_INIT = 5
NS_METHOD_RNG = 6
NS_TRAIN_INSTANCE = 7
