"""CSG shape grammar.

    S => E
    E => C(E, T(E)) | P
    C => union | subtract
    P => sphere | cube | truncated_cone | tetrahedron
    T => rand_transl * rand_rotate * rand_scale

Each node draws from its own counter stream addressed by its heap index, so a
rule flip at one node leaves the draws of every other node untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .decision import CSG_SHAPE_LAYOUT
from .sampling import SeedString, categorical, lognormal, normal, uniform_rotation

PRIMITIVES = ("sphere", "cube", "truncated_cone", "tetrahedron")
OPERATIONS = ("union", "subtract")
MAX_DEPTH = 62  # heap addresses must fit in 64 bits

_SHAPE_PART = 1


@dataclass(frozen=True)
class Transform:
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def to_local(self, p: np.ndarray) -> np.ndarray:
        """Map world points ``(..., 3)`` into this node's frame."""
        return ((np.asarray(p) - self.translation) @ self.rotation) / self.scale

    @property
    def lipschitz(self) -> float:
        return float(np.min(self.scale))


IDENTITY = Transform()


@dataclass(frozen=True)
class CsgTree:
    kind: Literal["union", "subtract", "primitive"]
    children: tuple[CsgTree, ...] = ()
    primitive: str | None = None
    size: tuple[float, ...] = ()
    transform: Transform = IDENTITY

    def __post_init__(self):
        if self.kind == "primitive":
            if self.children or self.primitive not in PRIMITIVES:
                raise ValueError(f"bad primitive node {self.primitive!r}")
            if not self.size or min(self.size) <= 0:
                raise ValueError("primitive sizes must be positive")
        elif len(self.children) != 2:
            raise ValueError("operation nodes need exactly two children")
        if np.any(self.transform.scale <= 0):
            raise ValueError("scale must be positive")

    @property
    def depth(self) -> int:
        return 0 if not self.children else 1 + max(c.depth for c in self.children)

    def leaves(self) -> list[CsgTree]:
        if self.kind == "primitive":
            return [self]
        return [leaf for c in self.children for leaf in c.leaves()]

    def __str__(self) -> str:
        if self.kind == "primitive":
            dims = ",".join(f"{s:.3g}" for s in self.size)
            return f"{self.primitive}({dims})"
        return f"{self.kind}({self.children[0]}, T({self.children[1]}))"


def sphere(radius: float, transform: Transform = IDENTITY) -> CsgTree:
    return CsgTree("primitive", primitive="sphere", size=(radius,), transform=transform)


def cube(side: float, transform: Transform = IDENTITY) -> CsgTree:
    return CsgTree("primitive", primitive="cube", size=(side,), transform=transform)


def truncated_cone(r_bottom: float, r_top: float, height: float, transform: Transform = IDENTITY) -> CsgTree:
    return CsgTree("primitive", primitive="truncated_cone", size=(r_bottom, r_top, height), transform=transform)


def tetrahedron(edge: float, transform: Transform = IDENTITY) -> CsgTree:
    return CsgTree("primitive", primitive="tetrahedron", size=(edge,), transform=transform)


def union(a: CsgTree, b: CsgTree, transform: Transform = IDENTITY) -> CsgTree:
    return CsgTree("union", (a, b), transform=transform)


def subtract(a: CsgTree, b: CsgTree, transform: Transform = IDENTITY) -> CsgTree:
    return CsgTree("subtract", (a, b), transform=transform)


def _with_transform(tree: CsgTree, transform: Transform) -> CsgTree:
    return CsgTree(tree.kind, tree.children, tree.primitive, tree.size, transform)


def sample_shape(beta_s, seed: SeedString, *, depth_cap: int = 6) -> CsgTree:
    """Draw a CSG tree from the grammar parametrized by the 29 shape entries.

    ``beta_s`` is assumed clipped.  At ``depth_cap`` expansion is disabled.
    """
    if not 0 <= depth_cap <= MAX_DEPTH:
        raise ValueError(f"depth_cap must be in [0, {MAX_DEPTH}]")
    b = CSG_SHAPE_LAYOUT.vector(np.asarray(beta_s, dtype=np.float64)[: CSG_SHAPE_LAYOUT.size])
    prim_w, op_w = b["primitive"], b["operation"]
    p_expand = float(b["expand"][0])
    tr, sc = b["translation"], b["scaling"]

    def node(address: int, depth: int) -> CsgTree:
        rng = seed.generator(address, _SHAPE_PART)
        u = rng.random(6)
        z = rng.standard_normal(8)
        p = p_expand if depth < depth_cap else 0.0
        if u[0] < p:
            op = OPERATIONS[categorical(op_w, u[1])]
            left = node(2 * address + 1, depth + 1)
            right = node(2 * address + 2, depth + 1)
            transform = Transform(
                translation=np.array([normal(z[i], tr[i], tr[3 + i]) for i in range(3)]),
                rotation=uniform_rotation(u[3], u[4], u[5]),
                scale=np.array([lognormal(z[3 + i], sc[i], sc[3 + i]) for i in range(3)]),
            )
            return CsgTree(op, (left, _with_transform(right, transform)))
        kind = PRIMITIVES[categorical(prim_w, u[2])]
        if kind == "sphere":
            size = (lognormal(z[6], *b["sphere_radius"]),)
        elif kind == "cube":
            size = (lognormal(z[6], *b["box_length"]),)
        elif kind == "truncated_cone":
            c = b["cone"]
            r = lognormal(z[6], c[0], c[1])
            size = (r, r, lognormal(z[7], c[2], c[3]))
        else:
            size = (lognormal(z[6], *b["tetrahedron_length"]),)
        return CsgTree("primitive", primitive=kind, size=size)

    return node(0, 0)
