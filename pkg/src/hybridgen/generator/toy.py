"""A smooth generator with a closed-form Jacobian.

The image is a Gaussian bump on a constant floor; the ground-truth normals
are those of the height field ``amplitude * bump`` tilted by a constant
slope.  The seed only jitters the bump center, so every output entry is a
smooth function of the six decision entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decision import DecisionLayout, _block
from .sample import Sample
from .sampling import SeedString

TOY_LAYOUT = DecisionLayout((
    _block("blob", ("center_x", -0.8, 0.8, 0.0), ("center_y", -0.8, 0.8, 0.0),
           ("width", 0.05, 1.0, 0.4)),
    _block("tilt", ("x", -1.0, 1.0, 0.0), ("y", -1.0, 1.0, 0.0)),
    _block("amplitude", ("value", 0.0, 0.9, 0.5)),
))

FLOOR = 0.1
JITTER = 0.05


@dataclass(frozen=True)
class ToyPipeline:
    resolution: tuple[int, int] = (8, 8)
    task: str = "normal"
    layout: DecisionLayout = TOY_LAYOUT

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (*self.resolution, 1)

    @property
    def target_shape(self) -> tuple[int, int, int]:
        return (*self.resolution, 3)

    def _grid(self):
        h, w = self.resolution
        u = (np.arange(w) + 0.5) / w * 2.0 - 1.0
        v = 1.0 - (np.arange(h) + 0.5) / h * 2.0
        return np.meshgrid(u, v)

    def _phase(self, seed: SeedString) -> np.ndarray:
        return JITTER * seed.generator(0, 3).standard_normal(2)

    def _fields(self, beta, seed):
        cx, cy, width, tx, ty, amp = np.asarray(beta, dtype=np.float64)
        px, py = self._phase(seed)
        uu, vv = self._grid()
        dx, dy = uu - cx - px, vv - cy - py
        w2 = width * width
        g = np.exp(-(dx * dx + dy * dy) / (2.0 * w2))
        # height field hgt = amp * g; its slopes
        hu = -amp * g * dx / w2
        hv = -amp * g * dy / w2
        m = np.stack([tx - hu, ty - hv, np.ones_like(hu)], axis=-1)
        return dict(cx=cx, cy=cy, width=width, amp=amp, dx=dx, dy=dy, g=g, hu=hu, hv=hv, m=m)

    def __call__(self, beta, seed: SeedString) -> Sample:
        f = self._fields(beta, seed)
        image = (FLOOR + f["amp"] * f["g"])[..., None]
        normals = f["m"] / np.linalg.norm(f["m"], axis=-1, keepdims=True)
        mask = np.ones(self.resolution, dtype=bool)
        return Sample(image=image, target=normals, mask=mask)

    def jacobian(self, beta, seed: SeedString) -> np.ndarray:
        """Exact ``d flatten(f(beta, seed)) / d beta`` of shape ``(|X|, 6)``."""
        f = self._fields(beta, seed)
        amp, width, dx, dy, g = f["amp"], f["width"], f["dx"], f["dy"], f["g"]
        w2 = width * width
        rho2 = dx * dx + dy * dy
        # derivatives of the bump g
        dg = {
            0: g * dx / w2,
            1: g * dy / w2,
            2: g * rho2 / (w2 * width),
        }
        p = self.resolution[0] * self.resolution[1]
        d_image = np.zeros((p, 6))
        for k in range(3):
            d_image[:, k] = (amp * dg[k]).ravel()
        d_image[:, 5] = g.ravel()

        # slopes hu = -amp * g * dx / w2, hv likewise with dy
        d_hu = np.zeros(dx.shape + (6,))
        d_hv = np.zeros(dx.shape + (6,))
        d_hu[..., 0] = -amp * (dg[0] * dx - g) / w2
        d_hv[..., 0] = -amp * dg[0] * dy / w2
        d_hu[..., 1] = -amp * dg[1] * dx / w2
        d_hv[..., 1] = -amp * (dg[1] * dy - g) / w2
        d_hu[..., 2] = -amp * dx * (dg[2] / w2 - 2.0 * g / (w2 * width))
        d_hv[..., 2] = -amp * dy * (dg[2] / w2 - 2.0 * g / (w2 * width))
        d_hu[..., 5] = -g * dx / w2
        d_hv[..., 5] = -g * dy / w2
        d_m = np.zeros(dx.shape + (3, 6))
        d_m[..., 0, :] = -d_hu
        d_m[..., 1, :] = -d_hv
        d_m[..., 0, 3] += 1.0
        d_m[..., 1, 4] += 1.0
        m = f["m"]
        norm = np.linalg.norm(m, axis=-1, keepdims=True)
        n = m / norm
        # d(m/|m|) = (I - n n^T) dm / |m|
        proj = np.eye(3) - n[..., :, None] * n[..., None, :]
        d_n = np.einsum("...ij,...jk->...ik", proj, d_m) / norm[..., None]
        return np.concatenate([d_image, d_n.reshape(-1, 6)], axis=0)
