"""Per-subsystem random streams derived from one global seed.

Each subsystem gets ``seed XOR tag``; the tags below are fixed forever so adding a
new subsystem never shifts an existing stream.
"""
import numpy as np

MASK64 = (1 << 64) - 1

SUBSYSTEM_TAGS = {
    "mc_iou": 0x6D63_696F_7500_0001,
    "correlation": 0x636F_7272_0000_0002,
    "perturb": 0x7065_7274_0000_0003,
    "box_noise": 0x626F_786E_0000_0004,
}


def subsystem_seed(seed: int, subsystem: str) -> int:
    return (int(seed) & MASK64) ^ SUBSYSTEM_TAGS[subsystem]


def derive_rng(seed: int, subsystem: str, *keys: int) -> np.random.Generator:
    """Generator for ``subsystem``; extra integer ``keys`` select independent sub-streams."""
    base = subsystem_seed(seed, subsystem)
    if keys:
        return np.random.default_rng([base, *(int(k) & MASK64 for k in keys)])
    return np.random.default_rng(base)
