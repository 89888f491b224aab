"""Counter-based random streams for reproducible particle simulation.

Every draw is produced by a Philox generator whose key is the user seed
plus a purpose tag and whose high counter word is a step index, so any
(seed, purpose, step) block can be regenerated independently of all the
others. Draws inside a block are laid out in a fixed particle-major
order; results are therefore bit-identical regardless of how the caller
parallelizes over particles.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "uniforms", "normal_block"]

_PURPOSE_TAGS = {
    "uniform": 0x9E3779B97F4A7C15,  # per-particle randomization variable U
    "stub": 0xC2B2AE3D27D4EB4F,     # Brownian increments before the start time
    "dyn": 0x165667B19E3779F9,      # Brownian increments driving the dynamics
    "probe": 0xD6E8FEB86659FD93,    # hypothesis validation / probe sampling
}


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Generator for the (seed, purpose, index) block.

    The index occupies the highest Philox counter word, so blocks never
    overlap however many values each one yields.
    """
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF, _PURPOSE_TAGS[purpose])
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, int(index)]))


def uniforms(seed: int, n: int) -> np.ndarray:
    """The n-vector of randomization variables U ~ Unif[0,1], one per particle."""
    return stream(seed, "uniform").random(n)


def normal_block(seed: int, purpose: str, index: int, shape) -> np.ndarray:
    """Standard normal block for one step; particle-major fixed layout."""
    return stream(seed, purpose, index).standard_normal(shape)
