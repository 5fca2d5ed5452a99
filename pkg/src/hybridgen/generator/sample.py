from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class Sample:
    """One generated training pair.

    ``image`` is ``(H, W, 1)`` shading in [0, 1]; ``target`` is ``(H, W, 3)``
    camera-space unit normals or ``(H, W, 1)`` depth, zero where ``mask`` is
    false.
    """

    image: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        h, w = self.mask.shape
        if self.image.shape[:2] != (h, w) or self.target.shape[:2] != (h, w):
            raise ValueError(
                f"sample fields disagree: image {self.image.shape}, target {self.target.shape}, mask {self.mask.shape}"
            )

    @property
    def size(self) -> int:
        return self.image.size + self.target.size

    def flatten(self) -> np.ndarray:
        """Image entries followed by target entries (the differentiable part)."""
        return np.concatenate([self.image.ravel(), self.target.ravel()])

    def split(self, flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inverse of :meth:`flatten` for any vector of the same layout."""
        flat = np.asarray(flat)
        n = self.image.size
        return flat[:n].reshape(self.image.shape), flat[n:].reshape(self.target.shape)

    def equals(self, other: Sample) -> bool:
        """Bit-exact comparison of all arrays."""
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in ((self.image, other.image), (self.target, other.target), (self.mask, other.mask))
        )
