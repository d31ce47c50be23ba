# src/core/rng.py
"""
src/core/rng.py

Per-path random streams.

Path i of a run with master seed m draws from a counter-based Philox
generator keyed by splitmix64(m XOR (i+1) * golden), so a path's noise
depends only on (m, i): not on chunking, thread scheduling or worker count.
Gaussians come from Box-Muller on consecutive uniform pairs.
"""

from dataclasses import dataclass

import numpy as np

from src.core.errors import ConfigurationError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(value: int) -> int:
    """One round of the splitmix64 output function (mod 2^64)."""
    z = (value + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def box_muller(uniforms: np.ndarray) -> np.ndarray:
    """Standard normals from pairs (u1, u2); both the cosine and the sine branch are used."""
    u1 = 1.0 - uniforms[0::2]          # (0, 1], keeps the log finite
    u2 = uniforms[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    out = np.empty(2 * u1.shape[0])
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out


@dataclass(frozen=True)
class RngSpec:
    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) <= MASK64:
            raise ConfigurationError(f"master seed must be a 64-bit unsigned integer, got {self.master_seed}")

    def path_seed(self, path_index: int) -> int:
        mixed = (int(self.master_seed) ^ (((path_index + 1) * GOLDEN_GAMMA) & MASK64)) & MASK64
        return splitmix64(mixed)

    def generator(self, path_index: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.path_seed(path_index)))

    def normals(self, path_index: int, count: int) -> np.ndarray:
        pairs = (count + 1) // 2
        uniforms = self.generator(path_index).random(2 * pairs)
        return box_muller(uniforms)[:count]

    def path_noise(self, path_index: int, steps: int, dim: int) -> np.ndarray:
        """(steps, dim) standard normals; the whole path is drawn up front."""
        return self.normals(path_index, steps * dim).reshape(steps, dim)

    def chunk_noise(self, path_indices, steps: int, dim: int) -> np.ndarray:
        return np.stack([self.path_noise(int(i), steps, dim) for i in path_indices], axis=0)


# src/core/rng.py
