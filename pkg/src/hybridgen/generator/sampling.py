"""Counter-based random draws and the distribution families used by the
generators.

Every random quantity is a deterministic function of a :class:`SeedString`,
a tree-node address and a slot, so two generator calls that share a seed but
differ in the decision vector consume identical draws.  Samplers are written
in reparameterized form (fixed uniform/normal draw pushed through a smooth
map) so outputs move continuously with the distribution parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True, order=True)
class SeedString:
    stream: int
    counter: int

    def __post_init__(self):
        object.__setattr__(self, "stream", int(self.stream) & _MASK64)
        object.__setattr__(self, "counter", int(self.counter) & _MASK64)

    def generator(self, address: int = 0, part: int = 0) -> np.random.Generator:
        """Independent Philox stream for one node address / purpose."""
        bitgen = np.random.Philox(
            key=np.array([self.stream, self.counter], dtype=np.uint64),
            counter=np.array([0, 0, int(address) & _MASK64, int(part) & _MASK64], dtype=np.uint64),
        )
        return np.random.Generator(bitgen)


def seed_range(stream: int, start: int, n: int) -> list[SeedString]:
    return [SeedString(stream, start + i) for i in range(n)]


def stream_id(*parts: int | str) -> int:
    """Stable 64-bit stream id from a tuple of ints/strings."""
    h = 1469598103934665603
    for part in parts:
        for byte in str(part).encode() + b"\x00":
            h = ((h ^ byte) * 1099511628211) & _MASK64
    return h


def categorical(weights: np.ndarray, u: float) -> int:
    """Index drawn from unnormalized nonnegative ``weights`` using uniform
    ``u``.  All-zero weights fall back to a uniform choice."""
    w = np.maximum(np.asarray(weights, dtype=np.float64), 0.0)
    total = w.sum()
    if total <= 0.0:
        w = np.ones_like(w)
        total = float(w.size)
    cdf = np.cumsum(w) / total
    return int(min(np.searchsorted(cdf, u, side="right"), w.size - 1))


def lognormal(z: float, log_mean: float, log_var: float) -> float:
    return math.exp(log_mean + math.sqrt(max(log_var, 0.0)) * z)


def normal(z: float, mean: float, var: float) -> float:
    return mean + math.sqrt(max(var, 0.0)) * z


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def von_mises_mixture(u: float, z: float, weights, means, kappas) -> float:
    """Angle from a mixture of circular normals.

    Each component is the wrapped Gaussian with variance ``1/kappa`` around
    its mean, which is the large-concentration form of the von Mises law and
    keeps the draw a smooth function of the parameters.
    """
    k = categorical(weights, u)
    return float(wrap_angle(means[k] + z / math.sqrt(kappas[k])))


def wrapped_normal_mixture(u: float, z: float, weights, means, variances) -> float:
    variances = np.maximum(np.asarray(variances, dtype=np.float64), 1e-300)
    return von_mises_mixture(u, z, weights, means, 1.0 / variances)


def uniform_rotation(u1: float, u2: float, u3: float) -> np.ndarray:
    """Rotation matrix uniformly distributed over SO(3) (Shoemake)."""
    a, b = math.sqrt(1 - u1), math.sqrt(u1)
    t1, t2 = 2 * math.pi * u2, 2 * math.pi * u3
    w, x, y, z = b * math.cos(t2), a * math.sin(t1), a * math.cos(t1), b * math.sin(t2)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
