"""Signed distance evaluation for CSG trees.

A tree is flattened into a postfix program whose leaves carry their
accumulated world-to-local affine map, so the inner loops can run under
numba.  Non-uniform scaling multiplies the local distance by the smallest
scale factor, which keeps the zero set exact and the field 1-Lipschitz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .grammar import PRIMITIVES, CsgTree

UNION, SUBTRACT = -1, -2
_STACK = 128


@dataclass(frozen=True)
class SdfProgram:
    codes: np.ndarray   # int64 postfix: leaf index >= 0, or UNION / SUBTRACT
    kinds: np.ndarray   # int64 primitive index per leaf
    params: np.ndarray  # (L, 3) primitive sizes
    affine: np.ndarray  # (L, 3, 3) world -> local linear part
    offset: np.ndarray  # (L, 3) world -> local offset
    factor: np.ndarray  # (L,) distance multiplier


def compile_tree(tree: CsgTree) -> SdfProgram:
    codes, kinds, params, affine, offset, factor = [], [], [], [], [], []

    def visit(node: CsgTree, m: np.ndarray, c: np.ndarray, k: float):
        t = node.transform
        local = (t.rotation / t.scale[None, :]).T  # S^-1 R^T
        m = local @ m
        c = local @ (c - t.translation)
        k = k * t.lipschitz
        if node.kind == "primitive":
            codes.append(len(kinds))
            kinds.append(PRIMITIVES.index(node.primitive))
            sz = list(node.size) + [0.0] * (3 - len(node.size))
            params.append(sz)
            affine.append(m)
            offset.append(c)
            factor.append(k)
            return
        visit(node.children[0], m, c, k)
        visit(node.children[1], m, c, k)
        codes.append(UNION if node.kind == "union" else SUBTRACT)

    visit(tree, np.eye(3), np.zeros(3), 1.0)
    if len(kinds) > _STACK:
        raise ValueError(f"tree has more than {_STACK} leaves")
    return SdfProgram(
        np.array(codes, dtype=np.int64),
        np.array(kinds, dtype=np.int64),
        np.array(params, dtype=np.float64).reshape(-1, 3),
        np.array(affine, dtype=np.float64).reshape(-1, 3, 3),
        np.array(offset, dtype=np.float64).reshape(-1, 3),
        np.array(factor, dtype=np.float64),
    )


_S = 1.0 / (2.0 * np.sqrt(2.0))
TETRA_VERTICES = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]) * _S


@numba.njit(cache=True, error_model="numpy")
def _clamp(x, lo, hi):
    return lo if x < lo else (hi if x > hi else x)


@numba.njit(cache=True, error_model="numpy")
def _seg_dist2(ex, ey, ez, qx, qy, qz):
    h = _clamp((ex * qx + ey * qy + ez * qz) / (ex * ex + ey * ey + ez * ez), 0.0, 1.0)
    dx, dy, dz = ex * h - qx, ey * h - qy, ez * h - qz
    return dx * dx + dy * dy + dz * dz


@numba.njit(cache=True, error_model="numpy")
def _edge_side(ex, ey, ez, nx, ny, nz, qx, qy, qz):
    cx = ey * nz - ez * ny
    cy = ez * nx - ex * nz
    cz = ex * ny - ey * nx
    return cx * qx + cy * qy + cz * qz


@numba.njit(cache=True, error_model="numpy")
def _ud_triangle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    # unsigned distance from p to triangle abc
    bax, bay, baz = bx - ax, by - ay, bz - az
    cbx, cby, cbz = cx - bx, cy - by, cz - bz
    acx, acy, acz = ax - cx, ay - cy, az - cz
    pax, pay, paz = px - ax, py - ay, pz - az
    pbx, pby, pbz = px - bx, py - by, pz - bz
    pcx, pcy, pcz = px - cx, py - cy, pz - cz
    nx = bay * acz - baz * acy
    ny = baz * acx - bax * acz
    nz = bax * acy - bay * acx
    s = (np.sign(_edge_side(bax, bay, baz, nx, ny, nz, pax, pay, paz))
         + np.sign(_edge_side(cbx, cby, cbz, nx, ny, nz, pbx, pby, pbz))
         + np.sign(_edge_side(acx, acy, acz, nx, ny, nz, pcx, pcy, pcz)))
    if s < 2.0:
        d2 = min(_seg_dist2(bax, bay, baz, pax, pay, paz),
                 min(_seg_dist2(cbx, cby, cbz, pbx, pby, pbz),
                     _seg_dist2(acx, acy, acz, pcx, pcy, pcz)))
        return np.sqrt(d2)
    num = nx * pax + ny * pay + nz * paz
    return abs(num) / np.sqrt(nx * nx + ny * ny + nz * nz)


_V = TETRA_VERTICES
_AX, _AY, _AZ = (float(c) for c in _V[0])
_BX, _BY, _BZ = (float(c) for c in _V[1])
_CX, _CY, _CZ = (float(c) for c in _V[2])
_DX, _DY, _DZ = (float(c) for c in _V[3])
_INRADIUS = float(np.linalg.norm(_V[0]) / 3.0)
_INV_SQRT3 = float(1.0 / np.sqrt(3.0))


@numba.njit(cache=True, inline="always", error_model="numpy")
def _unit_tetra_sdf(x, y, z):
    # face opposite vertex v has outward normal -v/|v| at distance |v|/3
    inside = max(
        max(-(x + y + z) * _INV_SQRT3, -(x - y - z) * _INV_SQRT3),
        max(-(-x + y - z) * _INV_SQRT3, -(-x - y + z) * _INV_SQRT3),
    ) - _INRADIUS
    if inside <= 0.0:
        return inside
    return min(
        min(_ud_triangle(x, y, z, _BX, _BY, _BZ, _CX, _CY, _CZ, _DX, _DY, _DZ),
            _ud_triangle(x, y, z, _AX, _AY, _AZ, _DX, _DY, _DZ, _CX, _CY, _CZ)),
        min(_ud_triangle(x, y, z, _AX, _AY, _AZ, _BX, _BY, _BZ, _DX, _DY, _DZ),
            _ud_triangle(x, y, z, _AX, _AY, _AZ, _CX, _CY, _CZ, _BX, _BY, _BZ)),
    )


@numba.njit(cache=True, inline="always", error_model="numpy")
def _primitive_sdf(kind, x, y, z, s0, s1, s2):
    if kind == 0:  # sphere, radius
        return np.sqrt(x * x + y * y + z * z) - s0
    if kind == 1:  # cube, side length
        h = 0.5 * s0
        qx, qy, qz = abs(x) - h, abs(y) - h, abs(z) - h
        ox, oy, oz = max(qx, 0.0), max(qy, 0.0), max(qz, 0.0)
        return np.sqrt(ox * ox + oy * oy + oz * oz) + min(max(qx, max(qy, qz)), 0.0)
    if kind == 2:  # capped cone along y: bottom radius, top radius, height
        r1, r2, h = s0, s1, 0.5 * s2
        qx, qy = np.sqrt(x * x + z * z), y
        k1x, k1y = r2, h
        k2x, k2y = r2 - r1, 2.0 * h
        cax = qx - min(qx, r1 if qy < 0.0 else r2)
        cay = abs(qy) - h
        t = _clamp(((k1x - qx) * k2x + (k1y - qy) * k2y) / (k2x * k2x + k2y * k2y), 0.0, 1.0)
        cbx = qx - k1x + k2x * t
        cby = qy - k1y + k2y * t
        s = -1.0 if (cbx < 0.0 and cay < 0.0) else 1.0
        return s * np.sqrt(min(cax * cax + cay * cay, cbx * cbx + cby * cby))
    # regular tetrahedron, edge length; exact under uniform scaling
    e = s0
    return e * _unit_tetra_sdf(x / e, y / e, z / e)


@numba.njit(cache=True, inline="always", error_model="numpy")
def _scene_sdf(px, py, pz, codes, kinds, params, affine, offset, factor, stack):
    top = 0
    for code in codes:
        if code >= 0:
            x = affine[code, 0, 0] * px + affine[code, 0, 1] * py + affine[code, 0, 2] * pz + offset[code, 0]
            y = affine[code, 1, 0] * px + affine[code, 1, 1] * py + affine[code, 1, 2] * pz + offset[code, 1]
            z = affine[code, 2, 0] * px + affine[code, 2, 1] * py + affine[code, 2, 2] * pz + offset[code, 2]
            d = _primitive_sdf(kinds[code], x, y, z, params[code, 0], params[code, 1], params[code, 2])
            stack[top] = d * factor[code]
            top += 1
        else:
            b = stack[top - 1]
            a = stack[top - 2]
            top -= 1
            if code == UNION:
                stack[top - 1] = min(a, b)
            else:
                stack[top - 1] = max(a, -b)
    return stack[0]


@numba.njit(cache=True, error_model="numpy")
def _sdf_points(points, codes, kinds, params, affine, offset, factor):
    out = np.empty(points.shape[0])
    stack = np.empty(_STACK)
    for i in range(points.shape[0]):
        out[i] = _scene_sdf(points[i, 0], points[i, 1], points[i, 2],
                            codes, kinds, params, affine, offset, factor, stack)
    return out


def _args(prog: SdfProgram):
    return (prog.codes, prog.kinds, prog.params, prog.affine, prog.offset, prog.factor)


def sdf_eval(tree: CsgTree | SdfProgram, point) -> float | np.ndarray:
    """Signed distance of ``point`` (shape ``(3,)`` or ``(N, 3)``) to the tree."""
    prog = tree if isinstance(tree, SdfProgram) else compile_tree(tree)
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    out = _sdf_points(np.ascontiguousarray(pts.reshape(-1, 3)), *_args(prog))
    return float(out[0]) if single else out
