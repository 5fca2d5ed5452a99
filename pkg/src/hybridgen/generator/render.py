"""Camera/light sampling and the orthographic sphere tracer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .decision import CSG_SHAPE_LAYOUT, RENDER_LAYOUT
from .grammar import CsgTree
from .sample import Sample
from .sampling import SeedString, wrap_angle, wrapped_normal_mixture
from .sdf import _STACK, SdfProgram, _scene_sdf, compile_tree

MAX_STEPS = 128
HIT_EPS = 1e-4
GRAD_STEP = 1e-4
AMBIENT = 0.1
CAMERA_DISTANCE = 6.0

_RENDER_PART = 2


@dataclass(frozen=True)
class RenderConfig:
    yaw: float
    pitch: float
    light: np.ndarray  # unit vector in camera coordinates (z toward the viewer)
    frame_scale: float = 2.0

    def __post_init__(self):
        if self.frame_scale <= 0:
            raise ValueError("frame_scale must be positive")
        if abs(np.linalg.norm(self.light) - 1.0) > 1e-9:
            raise ValueError("light direction must be unit length")

    @property
    def direction(self) -> np.ndarray:
        """Unit vector from the origin toward the camera."""
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([cp * sy, sp, cp * cy])

    def basis(self) -> np.ndarray:
        """Rows are the camera right, up and back (toward viewer) axes."""
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        back = np.array([cp * sy, sp, cp * cy])
        up = np.array([-sp * sy, cp, -sp * cy])
        right = np.cross(up, back)
        return np.stack([right, up, back])


def light_direction(azimuth: float, elevation: float) -> np.ndarray:
    ce = math.cos(elevation)
    return np.array([ce * math.cos(azimuth), ce * math.sin(azimuth), math.sin(elevation)])


def sample_render(beta_r, seed: SeedString, *, frame_scale: float = 2.0) -> RenderConfig:
    """Camera yaw/pitch from circular mixtures and a light on the viewer-side
    hemisphere, all parametrized by the 22 render entries."""
    b = RENDER_LAYOUT.vector(np.asarray(beta_r, dtype=np.float64))
    rng = seed.generator(0, _RENDER_PART)
    u = rng.random(2)
    z = rng.standard_normal(4)
    yaw = b["yaw"]
    pitch = b["pitch"]
    yaw_angle = wrapped_normal_mixture(u[0], z[0], yaw[0:3], yaw[3:6], yaw[6:9])
    pitch_angle = wrapped_normal_mixture(u[1], z[1], pitch[0:3], pitch[3:6], pitch[6:9])
    az_mean, az_var, el_mean, el_var = b["light"]
    azimuth = float(wrap_angle(az_mean + math.sqrt(az_var) * z[2]))
    elevation = min(max(el_mean + math.sqrt(el_var) * z[3], 0.05), math.pi / 2)
    return RenderConfig(yaw_angle, pitch_angle, light_direction(azimuth, elevation), frame_scale)


@numba.njit(cache=True, error_model="numpy")
def _trace(origins, direction, tmax, codes, kinds, params, affine, offset, factor):
    n = origins.shape[0]
    depth = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    stack = np.empty(_STACK)
    for i in range(n):
        t = 0.0
        for _ in range(MAX_STEPS):
            px = origins[i, 0] + t * direction[0]
            py = origins[i, 1] + t * direction[1]
            pz = origins[i, 2] + t * direction[2]
            d = _scene_sdf(px, py, pz, codes, kinds, params, affine, offset, factor, stack)
            if d < HIT_EPS:
                depth[i] = t
                h = GRAD_STEP
                gx = (_scene_sdf(px + h, py, pz, codes, kinds, params, affine, offset, factor, stack)
                      - _scene_sdf(px - h, py, pz, codes, kinds, params, affine, offset, factor, stack))
                gy = (_scene_sdf(px, py + h, pz, codes, kinds, params, affine, offset, factor, stack)
                      - _scene_sdf(px, py - h, pz, codes, kinds, params, affine, offset, factor, stack))
                gz = (_scene_sdf(px, py, pz + h, codes, kinds, params, affine, offset, factor, stack)
                      - _scene_sdf(px, py, pz - h, codes, kinds, params, affine, offset, factor, stack))
                g = math.sqrt(gx * gx + gy * gy + gz * gz)
                if g > 0.0:
                    normal[i, 0] = gx / g
                    normal[i, 1] = gy / g
                    normal[i, 2] = gz / g
                else:
                    depth[i] = np.inf
                break
            t += d
            if t > tmax:
                break
    return depth, normal


def pixel_offsets(height: int, width: int, frame_scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical image-plane coordinates of pixel centers
    (row 0 at the top)."""
    u = ((np.arange(width) + 0.5) / width * 2.0 - 1.0) * frame_scale
    v = (1.0 - (np.arange(height) + 0.5) / height * 2.0) * frame_scale
    return np.meshgrid(u, v)


def render(shape: CsgTree | SdfProgram, config: RenderConfig, *, resolution=(16, 16), task: str = "normal") -> Sample:
    """Sphere-trace ``shape`` and return shading, ground truth and mask.

    Normals are expressed in camera coordinates; depth is the ray parameter
    measured from the image plane at ``CAMERA_DISTANCE``.
    """
    prog = shape if isinstance(shape, SdfProgram) else compile_tree(shape)
    h, w = resolution
    basis = config.basis()
    uu, vv = pixel_offsets(h, w, config.frame_scale)
    origins = (uu.reshape(-1, 1) * basis[0] + vv.reshape(-1, 1) * basis[1] + CAMERA_DISTANCE * basis[2])
    depth, normal = _trace(
        np.ascontiguousarray(origins), np.ascontiguousarray(-basis[2]), 2.0 * CAMERA_DISTANCE,
        prog.codes, prog.kinds, prog.params, prog.affine, prog.offset, prog.factor,
    )
    hit = np.isfinite(depth)
    cam_normal = normal @ basis.T
    cam_normal[~hit] = 0.0
    shading = np.clip(np.maximum(cam_normal @ config.light, 0.0) + AMBIENT, 0.0, 1.0)
    shading[~hit] = 0.0
    if task == "normal":
        target = cam_normal.reshape(h, w, 3)
    elif task == "depth":
        target = np.where(hit, depth, 0.0).reshape(h, w, 1)
    else:
        raise ValueError(f"unknown task {task!r}")
    return Sample(
        image=shading.reshape(h, w, 1),
        target=target,
        mask=hit.reshape(h, w),
        meta={"all_miss": not bool(hit.any())},
    )


def split_beta(beta) -> tuple[np.ndarray, np.ndarray]:
    """``(beta_s, beta_r)`` halves of a full CSG decision vector."""
    values = np.asarray(beta, dtype=np.float64)
    n = CSG_SHAPE_LAYOUT.size
    return values[:n], values[n:]
