"""Decision vectors: named, bounded real parameter blocks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

VAR_FLOOR = 1e-4


@dataclass(frozen=True)
class Entry:
    name: str
    lo: float
    hi: float
    default: float


@dataclass(frozen=True)
class Block:
    name: str
    entries: tuple[Entry, ...]

    @property
    def size(self) -> int:
        return len(self.entries)


def _block(name, *entries) -> Block:
    return Block(name, tuple(Entry(f"{name}.{e[0]}", *e[1:]) for e in entries))


@dataclass(frozen=True)
class DecisionLayout:
    blocks: tuple[Block, ...]

    @cached_property
    def entries(self) -> tuple[Entry, ...]:
        return tuple(e for b in self.blocks for e in b.entries)

    @property
    def size(self) -> int:
        return len(self.entries)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([e.lo for e in self.entries])

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([e.hi for e in self.entries])

    @cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    @cached_property
    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for b in self.blocks:
            out[b.name] = slice(start, start + b.size)
            start += b.size
        return out

    def index(self, name: str) -> int:
        return self.names.index(name)

    def default(self) -> DecisionVector:
        return DecisionVector(np.array([e.default for e in self.entries]), self)

    def clip(self, values: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(values, dtype=np.float64), self.lower, self.upper)

    def vector(self, values) -> DecisionVector:
        values = np.array(values, dtype=np.float64)
        if values.shape != (self.size,):
            raise ValueError(f"expected {self.size} decision values, got shape {values.shape}")
        return DecisionVector(values, self)

    def from_dict(self, overrides: dict[str, float], base: DecisionVector | None = None) -> DecisionVector:
        values = (base or self.default()).values.copy()
        for key, v in overrides.items():
            if key in self.slices:
                v = np.broadcast_to(np.asarray(v, dtype=np.float64), (self.slices[key].stop - self.slices[key].start,))
                values[self.slices[key]] = v
            elif key in self.names:
                values[self.index(key)] = float(v)
            else:
                raise KeyError(f"unknown decision entry {key!r}")
        return DecisionVector(values, self)

    def __add__(self, other: DecisionLayout) -> DecisionLayout:
        return DecisionLayout(self.blocks + other.blocks)


@dataclass(frozen=True, eq=False)
class DecisionVector:
    values: np.ndarray
    layout: DecisionLayout

    def __post_init__(self):
        if self.values.shape != (self.layout.size,):
            raise ValueError(f"decision vector has {self.values.shape} values, layout needs {self.layout.size}")

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self) -> int:
        return self.layout.size

    def __getitem__(self, key: str) -> np.ndarray:
        if key in self.layout.slices:
            return self.values[self.layout.slices[key]]
        return self.values[self.layout.index(key)]

    def to_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.layout.names, self.values)}


def clip_to_valid(beta: DecisionVector) -> DecisionVector:
    """Clamp every entry into its declared bound (idempotent)."""
    return DecisionVector(beta.layout.clip(beta.values), beta.layout)


# 29 entries: rule probabilities and log-normal parameters of the CSG grammar.
CSG_SHAPE_LAYOUT = DecisionLayout((
    _block("primitive", ("sphere", 0.0, 1.0, 0.25), ("cube", 0.0, 1.0, 0.25),
           ("truncated_cone", 0.0, 1.0, 0.25), ("tetrahedron", 0.0, 1.0, 0.25)),
    _block("operation", ("union", 0.0, 1.0, 0.5), ("subtract", 0.0, 1.0, 0.5)),
    _block("expand", ("prob", 0.0, 1.0, 0.4)),
    _block("translation", ("mean_x", -1.5, 1.5, 0.0), ("mean_y", -1.5, 1.5, 0.0),
           ("mean_z", -1.5, 1.5, 0.0), ("var_x", VAR_FLOOR, 1.0, 0.25),
           ("var_y", VAR_FLOOR, 1.0, 0.25), ("var_z", VAR_FLOOR, 1.0, 0.25)),
    _block("scaling", ("log_mean_x", -1.5, 1.0, -0.3), ("log_mean_y", -1.5, 1.0, -0.3),
           ("log_mean_z", -1.5, 1.0, -0.3), ("log_var_x", VAR_FLOOR, 1.0, 0.04),
           ("log_var_y", VAR_FLOOR, 1.0, 0.04), ("log_var_z", VAR_FLOOR, 1.0, 0.04)),
    _block("sphere_radius", ("log_mean", -2.0, 0.5, -0.2), ("log_var", VAR_FLOOR, 1.0, 0.04)),
    _block("box_length", ("log_mean", -2.0, 1.0, 0.3), ("log_var", VAR_FLOOR, 1.0, 0.04)),
    _block("cone", ("radius_log_mean", -2.0, 0.5, -0.4), ("radius_log_var", VAR_FLOOR, 1.0, 0.04),
           ("height_log_mean", -2.0, 1.0, 0.3), ("height_log_var", VAR_FLOOR, 1.0, 0.04)),
    _block("tetrahedron_length", ("log_mean", -2.0, 1.0, 0.6), ("log_var", VAR_FLOOR, 1.0, 0.04)),
))


def _mixture_block(name, mean_lo, mean_hi, means) -> Block:
    return _block(
        name,
        ("weight_0", 0.0, 1.0, 1.0), ("weight_1", 0.0, 1.0, 0.0), ("weight_2", 0.0, 1.0, 0.0),
        ("mean_0", mean_lo, mean_hi, means[0]), ("mean_1", mean_lo, mean_hi, means[1]),
        ("mean_2", mean_lo, mean_hi, means[2]),
        ("var_0", VAR_FLOOR, 4.0, 0.1), ("var_1", VAR_FLOOR, 4.0, 0.1), ("var_2", VAR_FLOOR, 4.0, 0.1),
    )


# 22 entries: camera yaw/pitch mixtures and light direction.
RENDER_LAYOUT = DecisionLayout((
    _mixture_block("yaw", -math.pi, math.pi, (0.4, -0.4, 2.0)),
    _mixture_block("pitch", -math.pi / 2, math.pi / 2, (0.3, -0.3, 0.8)),
    _block("light", ("azimuth_mean", -math.pi, math.pi, 0.8), ("azimuth_var", VAR_FLOOR, 4.0, 0.05),
           ("elevation_mean", 0.1, math.pi / 2, 0.9), ("elevation_var", VAR_FLOOR, 1.0, 0.02)),
))

CSG_LAYOUT = CSG_SHAPE_LAYOUT + RENDER_LAYOUT
