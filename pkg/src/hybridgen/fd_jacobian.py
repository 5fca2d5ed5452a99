"""Jacobian of a black-box generator from central differences along random
Gaussian directions.

For probes ``delta_j`` the estimate is::

    J = (1/m) sum_j  [f(b + d_j) - f(b - d_j)] / (2 |d_j|)  outer  d_j / |d_j|

Its expectation for a linear ``f(b) = A b`` in ``d`` dimensions is ``A / d``;
the shrinkage is left in place because the outer optimizer normalizes
per-coordinate scale.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np


class ProbeError(FloatingPointError):
    """A generator call produced non-finite output."""

    def __init__(self, probe: int, sign: str):
        self.probe = probe
        self.sign = sign
        super().__init__(f"generator output is not finite for probe {probe} ({sign})")


@dataclass(frozen=True)
class ProbeConfig:
    m: int = 8
    sigma: float = 0.02
    seed: int = 0
    share_probes: bool = True  # one probe set per outer step for all samples

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("probe count m must be a positive integer")
        if not self.sigma > 0:
            raise ValueError("probe scale sigma must be positive")


@dataclass
class JacobianEstimate:
    matrix: np.ndarray            # (|X|, |beta|)
    m: int
    sigma: float
    seeds: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not np.all(np.isfinite(self.matrix)):
            raise ProbeError(-1, "reduction")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def sample_directions(dim: int, config: ProbeConfig, *, stream: int = 0) -> np.ndarray:
    """``(m, dim)`` array of i.i.d. ``Normal(0, sigma)`` entries (``sigma`` is
    the standard deviation).  ``stream`` selects an independent draw for the
    same config, e.g. the outer-step index."""
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    rng = np.random.Generator(np.random.Philox(key=[config.seed, stream]))
    return config.sigma * rng.standard_normal((config.m, dim))


def _flat(x) -> np.ndarray:
    if hasattr(x, "flatten") and not isinstance(x, np.ndarray):
        return x.flatten()
    return np.asarray(x, dtype=np.float64).ravel()


def estimate_jacobian(
    f: Callable,
    beta,
    seed,
    config: ProbeConfig,
    *,
    directions: np.ndarray | None = None,
    clip: Callable[[np.ndarray], np.ndarray] | None = None,
    executor: Executor | None = None,
    stream: int = 0,
) -> JacobianEstimate:
    """Estimate ``d flatten(f(beta, seed)) / d beta``.

    Every call uses the same ``seed``.  ``clip`` maps perturbed points back
    into the valid range; the unclipped direction enters the outer product.
    ``directions`` overrides sampling (for sharing one probe set across
    samples).  With an ``executor`` the 2m calls are dispatched to it; the
    reduction order is fixed either way.
    """
    beta = np.asarray(beta, dtype=np.float64)
    deltas = sample_directions(beta.size, config, stream=stream) if directions is None else np.asarray(directions)
    if deltas.ndim != 2 or deltas.shape[1] != beta.size:
        raise ValueError(f"directions have shape {deltas.shape}, expected (m, {beta.size})")
    clip = clip or (lambda b: b)
    points = []
    for d in deltas:
        points.append(clip(beta + d))
        points.append(clip(beta - d))

    def call(point):
        return _flat(f(point, seed))

    outputs = list(executor.map(call, points)) if executor is not None else [call(p) for p in points]

    total = None
    for j, d in enumerate(deltas):
        plus, minus = outputs[2 * j], outputs[2 * j + 1]
        if not np.all(np.isfinite(plus)):
            raise ProbeError(j, "+")
        if not np.all(np.isfinite(minus)):
            raise ProbeError(j, "-")
        norm = np.linalg.norm(d)
        if norm == 0.0:
            continue
        term = np.outer((plus - minus) / (2.0 * norm), d / norm)
        total = term if total is None else total + term
    if total is None:
        total = np.zeros((outputs[0].size, beta.size))
    return JacobianEstimate(total / len(deltas), len(deltas), config.sigma, (config.seed, stream))


def estimate_scalar_gradient(
    f: Callable[[np.ndarray], float],
    beta,
    deltas: np.ndarray,
    *,
    clip: Callable[[np.ndarray], np.ndarray] | None = None,
    values: Sequence[tuple[float, float]] | None = None,
) -> np.ndarray:
    """The same estimator for a scalar map; returns a ``|beta|`` vector.

    ``values`` supplies precomputed ``(f(b+d_j), f(b-d_j))`` pairs."""
    beta = np.asarray(beta, dtype=np.float64)
    clip = clip or (lambda b: b)
    if values is None:
        values = [(f(clip(beta + d)), f(clip(beta - d))) for d in deltas]
    g = np.zeros(beta.size)
    for d, (lp, lm) in zip(deltas, values):
        norm = np.linalg.norm(d)
        if norm == 0.0:
            continue
        g += (lp - lm) / (2.0 * norm) * (d / norm)
    return g / len(deltas)
