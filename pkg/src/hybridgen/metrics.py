"""Evaluation metrics for normal and depth maps over masked pixels.

Angles are in radians; convert with :func:`degrees` only when reporting.
"""

from __future__ import annotations

import numpy as np

UNIT_TOL = 1e-4


class MetricError(ValueError):
    pass


def _select(pred, gt, mask, channels: int | None):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricError(f"prediction shape {pred.shape} differs from ground truth {gt.shape}")
    spatial = pred.shape[:-1] if channels else pred.shape
    if mask is None:
        mask = np.ones(spatial, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != spatial:
        raise MetricError(f"mask shape {mask.shape} does not match maps {spatial}")
    if not mask.any():
        raise MetricError("mask selects no pixels")
    return pred[mask], gt[mask]


def pixel_angles(pred, gt, mask=None) -> np.ndarray:
    """Per-pixel angle between unit normals, in radians."""
    p, g = _select(pred, gt, mask, channels=3)
    for name, v in (("prediction", p), ("ground truth", g)):
        if np.any(np.abs(np.linalg.norm(v, axis=-1) - 1.0) > UNIT_TOL):
            raise MetricError(f"{name} normals are not unit length")
    return np.arccos(np.clip(np.sum(p * g, axis=-1), -1.0, 1.0))


def mean_angle_error(pred, gt, mask=None) -> float:
    return float(np.mean(pixel_angles(pred, gt, mask)))


def median_angle_error(pred, gt, mask=None) -> float:
    """Median; for an even count the mean of the two central values."""
    return float(np.median(pixel_angles(pred, gt, mask)))


def threshold_pct(pred, gt, delta: float, mask=None) -> float:
    """Percentage of pixels with angle at most ``delta`` radians."""
    return float(100.0 * np.mean(pixel_angles(pred, gt, mask) <= delta))


def mse_angle(pred, gt, mask=None) -> float:
    return float(np.mean(pixel_angles(pred, gt, mask) ** 2))


def _depths(pred, gt, mask):
    p, g = _select(pred, gt, mask, channels=None)
    if np.any(p <= 0) or np.any(g <= 0):
        raise MetricError("depths must be positive on valid pixels")
    return p, g


def abs_rel(pred, gt, mask=None) -> float:
    p, g = _depths(pred, gt, mask)
    return float(np.mean(np.abs(p - g) / g))


def sq_rel(pred, gt, mask=None) -> float:
    p, g = _depths(pred, gt, mask)
    return float(np.mean((p - g) ** 2 / g))


def rmse_linear(pred, gt, mask=None) -> float:
    p, g = _depths(pred, gt, mask)
    return float(np.sqrt(np.mean((p - g) ** 2)))


def rmse_log(pred, gt, mask=None) -> float:
    p, g = _depths(pred, gt, mask)
    return float(np.sqrt(np.mean(np.log(p / g) ** 2)))


def rmse_log_scale_invariant(pred, gt, mask=None) -> float:
    """RMSE of the log ratio after removing its mean, so a global rescaling
    of the prediction has no effect."""
    p, g = _depths(pred, gt, mask)
    r = np.log(p / g)
    # shifted mean: equals r[0] exactly when all log ratios coincide
    centred = (r - r[0]) - np.mean(r - r[0])
    return float(np.sqrt(np.mean(centred ** 2)))


def degrees(radians):
    return np.degrees(radians)


NORMAL_METRICS = {
    "mae": mean_angle_error,
    "median": median_angle_error,
    "mse_angle": mse_angle,
}
DEPTH_METRICS = {
    "abs_rel": abs_rel,
    "sq_rel": sq_rel,
    "rmse": rmse_linear,
    "rmse_log": rmse_log,
    "rmse_log_si": rmse_log_scale_invariant,
}
