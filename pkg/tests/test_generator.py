import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridgen.generator import container
from hybridgen.generator.decision import CSG_LAYOUT, CSG_SHAPE_LAYOUT, RENDER_LAYOUT, VAR_FLOOR, clip_to_valid
from hybridgen.generator.grammar import (
    PRIMITIVES,
    CsgTree,
    Transform,
    cube,
    sample_shape,
    sphere,
    subtract,
    tetrahedron,
    truncated_cone,
    union,
)
from hybridgen.generator.pipeline import CsgPipeline, generate_dataset
from hybridgen.generator.render import CAMERA_DISTANCE, RenderConfig, pixel_offsets, render, sample_render, split_beta
from hybridgen.generator.sample import Sample
from hybridgen.generator.sampling import SeedString, categorical, seed_range, stream_id, von_mises_mixture
from hybridgen.generator.sdf import TETRA_VERTICES, sdf_eval
from hybridgen.generator.toy import TOY_LAYOUT, ToyPipeline
from oracles import rel_err

DEFAULT = CSG_LAYOUT.default().values


def shape_beta(**overrides):
    return CSG_SHAPE_LAYOUT.from_dict(overrides).values


def render_beta(**overrides):
    return RENDER_LAYOUT.from_dict(overrides).values


# --- decision vectors -------------------------------------------------------------

def test_layout_census():
    assert CSG_SHAPE_LAYOUT.size == 29 and RENDER_LAYOUT.size == 22 and CSG_LAYOUT.size == 51
    assert np.all(CSG_LAYOUT.lower <= DEFAULT) and np.all(DEFAULT <= CSG_LAYOUT.upper)


def test_clip_examples():
    beta = CSG_LAYOUT.default()
    assert np.array_equal(clip_to_valid(beta).values, beta.values)
    raw = beta.values.copy()
    raw[CSG_LAYOUT.index("primitive.sphere")] = -0.2
    raw[CSG_LAYOUT.index("sphere_radius.log_var")] = 1e-7
    clipped = CSG_LAYOUT.clip(raw)
    assert clipped[CSG_LAYOUT.index("primitive.sphere")] == 0.0
    assert clipped[CSG_LAYOUT.index("sphere_radius.log_var")] == VAR_FLOOR


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=51, max_size=51))
def test_clip_is_idempotent_and_in_bounds(values):
    once = CSG_LAYOUT.clip(np.array(values))
    assert np.array_equal(CSG_LAYOUT.clip(once), once)
    assert np.all(once >= CSG_LAYOUT.lower) and np.all(once <= CSG_LAYOUT.upper)


def test_from_dict_rejects_unknown_names():
    with pytest.raises(KeyError):
        CSG_LAYOUT.from_dict({"primitive.spher": 1.0})
    v = CSG_LAYOUT.from_dict({"primitive": [1, 0, 0, 0]})
    assert list(v["primitive"]) == [1, 0, 0, 0]


# --- counter-based draws ----------------------------------------------------------

def test_seed_streams_are_reproducible_and_distinct():
    a = SeedString(1, 2).generator(3, 1).random(4)
    assert np.array_equal(a, SeedString(1, 2).generator(3, 1).random(4))
    assert not np.array_equal(a, SeedString(1, 3).generator(3, 1).random(4))
    assert not np.array_equal(a, SeedString(1, 2).generator(4, 1).random(4))
    assert stream_id("x", 1) == stream_id("x", 1) != stream_id("x", 2)
    assert seed_range(5, 3, 2) == [SeedString(5, 3), SeedString(5, 4)]


def test_categorical_normalizes_weights():
    assert categorical(np.array([2.0, 0.0, 2.0]), 0.49) == 0
    assert categorical(np.array([2.0, 0.0, 2.0]), 0.51) == 2
    assert categorical(np.zeros(4), 0.99) == 3


def test_concentrated_circular_draw_hits_the_mean():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = von_mises_mixture(rng.random(), rng.standard_normal(), [1, 0, 0], [0.7, -2, 2], [1e6, 1, 1])
        assert abs(a - 0.7) <= 1e-2


def test_single_component_mixture_and_circular_mean():
    beta_r = render_beta(**{"yaw.mean_0": 0.7, "yaw.mean_1": -2.5, "yaw.var_0": 0.3})
    seeds = seed_range(stream_id("yaw-test"), 0, 10_000)
    yaws = np.array([sample_render(beta_r, s).yaw for s in seeds])
    mean = math.atan2(np.sin(yaws).mean(), np.cos(yaws).mean())
    assert abs(mean - 0.7) <= 0.05
    assert np.min(np.abs(yaws + 2.5)) > 0.5  # component 2 never used


def test_light_stays_on_viewer_side():
    for s in seed_range(9, 0, 200):
        cfg = sample_render(render_beta(**{"light.elevation_var": 1.0}), s)
        assert cfg.light[2] > 0 and abs(np.linalg.norm(cfg.light) - 1) < 1e-12


# --- grammar ------------------------------------------------------------------------

def test_no_expansion_gives_single_primitive():
    beta = shape_beta(**{"expand.prob": 0.0})
    for s in seed_range(1, 0, 300):
        assert sample_shape(beta, s).kind == "primitive"


def test_sphere_only_leaves():
    beta = shape_beta(**{"primitive": [1, 0, 0, 0], "expand.prob": 0.6})
    for s in seed_range(2, 0, 200):
        assert {leaf.primitive for leaf in sample_shape(beta, s).leaves()} == {"sphere"}


def test_expected_leaf_count_uncapped():
    # a node is a leaf with probability 1 - p, otherwise it has two subtrees,
    # so E = (1 - p) + 2 p E, i.e. E = (1 - p) / (1 - 2p); total nodes 1 / (1 - 2p)
    p = 0.3
    beta = shape_beta(**{"expand.prob": p})
    trees = [sample_shape(beta, s, depth_cap=62) for s in seed_range(3, 0, 10_000)]
    leaves = np.mean([len(t.leaves()) for t in trees])
    nodes = np.mean([2 * len(t.leaves()) - 1 for t in trees])
    assert abs(leaves / ((1 - p) / (1 - 2 * p)) - 1) <= 0.05
    assert abs(nodes / (1 / (1 - 2 * p)) - 1) <= 0.05


def test_expected_leaf_count_with_depth_cap():
    # E_cap = 1 and E_d = (1 - p) + 2 p E_{d+1}
    p, cap = 0.5, 6
    expected = 1.0
    for _ in range(cap):
        expected = (1 - p) + 2 * p * expected
    beta = shape_beta(**{"expand.prob": p})
    trees = [sample_shape(beta, s, depth_cap=cap) for s in seed_range(4, 0, 10_000)]
    assert max(t.depth for t in trees) <= cap
    assert abs(np.mean([len(t.leaves()) for t in trees]) / expected - 1) <= 0.05


def test_primitive_sizes_positive_at_extreme_bounds():
    for bound in (CSG_SHAPE_LAYOUT.lower, CSG_SHAPE_LAYOUT.upper):
        beta = bound.copy()
        beta[CSG_SHAPE_LAYOUT.index("expand.prob")] = 0.5
        beta[CSG_SHAPE_LAYOUT.slices["primitive"]] = 1.0
        for s in seed_range(5, 0, 100):
            for leaf in sample_shape(beta, s).leaves():
                assert min(leaf.size) > 0 and np.all(np.isfinite(leaf.size))


def test_shape_sampling_is_pure():
    beta = shape_beta(**{"expand.prob": 0.5})
    s = SeedString(7, 7)
    assert str(sample_shape(beta, s)) == str(sample_shape(beta, s))


def test_tree_validation():
    with pytest.raises(ValueError):
        CsgTree("primitive", primitive="torus", size=(1.0,))
    with pytest.raises(ValueError):
        CsgTree("union", (sphere(1.0),))
    with pytest.raises(ValueError):
        sphere(-1.0)


# --- signed distances ---------------------------------------------------------------

def test_sdf_examples():
    assert sdf_eval(sphere(1.0), [2.0, 0.0, 0.0]) == pytest.approx(1.0, abs=1e-15)
    left = sphere(1.0, Transform(translation=np.array([-2.0, 0, 0])))
    right = sphere(1.0, Transform(translation=np.array([2.0, 0, 0])))
    p = np.array([0.5, 0.3, -0.2])
    assert sdf_eval(union(left, right), p) == pytest.approx(min(sdf_eval(left, p), sdf_eval(right, p)), abs=1e-15)
    assert sdf_eval(subtract(cube(2.0), sphere(1.0)), [0.0, 0.0, 0.0]) == pytest.approx(1.0, abs=1e-15)


def _random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def _inside(kind, size, p):
    """Exact membership in a primitive's local frame."""
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if kind == "sphere":
        return x * x + y * y + z * z < size[0] ** 2
    if kind == "cube":
        return np.max(np.abs(p), axis=-1) < size[0] / 2
    if kind == "truncated_cone":
        r1, r2, h = size
        frac = (y + h / 2) / h
        return (np.abs(y) < h / 2) & (np.hypot(x, z) < r1 + (r2 - r1) * frac)
    verts = TETRA_VERTICES * size[0]
    bary = np.linalg.solve(np.vstack([verts.T, np.ones(4)]), np.vstack([p.T, np.ones(len(p))]))
    return np.all(bary > 0, axis=0)


SHAPES = {
    "sphere": lambda: sphere(0.8),
    "cube": lambda: cube(1.3),
    "truncated_cone": lambda: truncated_cone(0.6, 0.3, 1.4),
    "tetrahedron": lambda: tetrahedron(1.7),
}


@pytest.mark.parametrize("kind", PRIMITIVES)
def test_sdf_sign_matches_membership(kind):
    rng = np.random.default_rng(PRIMITIVES.index(kind))
    tree = SHAPES[kind]()
    pts = rng.uniform(-1.2, 1.2, (1000, 3))
    d = sdf_eval(tree, pts)
    inside = _inside(kind, tree.size, pts)
    keep = np.abs(d) > 1e-9
    assert np.array_equal((d < 0)[keep], inside[keep])


@pytest.mark.parametrize("op", ["union", "subtract"])
def test_composite_sdf_sign_matches_membership(op):
    rng = np.random.default_rng(5)
    rot = _random_rotation(rng)
    t = Transform(translation=np.array([0.4, -0.1, 0.2]), rotation=rot, scale=np.array([0.8, 1.1, 0.9]))
    a, b = cube(1.4), truncated_cone(0.5, 0.5, 1.2)
    tree = union(a, CsgTree(b.kind, primitive=b.primitive, size=b.size, transform=t)) if op == "union" else \
        subtract(a, CsgTree(b.kind, primitive=b.primitive, size=b.size, transform=t))
    pts = rng.uniform(-1.2, 1.2, (1000, 3))
    in_a = _inside("cube", a.size, pts)
    in_b = _inside("truncated_cone", b.size, t.to_local(pts))
    expected = in_a | in_b if op == "union" else in_a & ~in_b
    d = sdf_eval(tree, pts)
    keep = np.abs(d) > 1e-9
    assert np.array_equal((d < 0)[keep], expected[keep])


def test_scaled_sdf_is_a_distance_bound():
    rng = np.random.default_rng(8)
    t = Transform(scale=np.array([0.5, 2.0, 1.0]))
    tree = CsgTree("primitive", primitive="sphere", size=(1.0,), transform=t)
    pts = rng.uniform(-3, 3, (500, 3))
    d = sdf_eval(tree, pts)
    # the true distance to the ellipsoid is at least the lower bound
    surf = rng.standard_normal((20000, 3))
    surf = surf / np.linalg.norm(surf, axis=1, keepdims=True) * t.scale
    true = np.min(np.linalg.norm(pts[:, None, :] - surf[None], axis=-1), axis=1)
    outside = d > 0
    assert np.all(d[outside] <= true[outside] + 1e-2)


# --- rendering ------------------------------------------------------------------------

FRONT = RenderConfig(0.0, 0.0, np.array([0.0, 0.0, 1.0]))


def test_centered_sphere_faces_camera():
    s = render(sphere(1.0), FRONT, resolution=(17, 17))
    assert s.mask[8, 8]
    assert np.max(np.abs(s.target[8, 8] - [0, 0, 1])) <= 1e-3


def test_facing_plane_under_head_on_light_is_fully_lit():
    s = render(cube(3.0), FRONT, resolution=(9, 9))
    assert s.image[4, 4, 0] == pytest.approx(1.0, abs=1e-9)


def test_sphere_depth_matches_ray_intersection():
    s = render(sphere(1.0), FRONT, resolution=(32, 32), task="depth")
    uu, vv = pixel_offsets(32, 32, FRONT.frame_scale)
    r2 = uu * uu + vv * vv
    analytic_hit = r2 < 1.0
    hits = s.mask & analytic_hit
    expected = CAMERA_DISTANCE - np.sqrt(1.0 - r2[hits])
    assert np.max(np.abs(s.target[hits, 0] - expected)) <= 1e-3
    assert np.array_equal(s.mask, analytic_hit)


def test_render_invariants_on_random_scenes():
    pipe_n = CsgPipeline(resolution=(16, 16), task="normal")
    pipe_d = CsgPipeline(resolution=(16, 16), task="depth")
    beta = CSG_LAYOUT.from_dict({"expand.prob": 0.45}).values
    for s in seed_range(11, 0, 25):
        n, d = pipe_n(beta, s), pipe_d(beta, s)
        assert np.array_equal(n.mask, d.mask)
        fg = n.mask
        np.testing.assert_allclose(np.linalg.norm(n.target[fg], axis=-1), 1.0, atol=1e-9)
        assert np.all(d.target[fg, 0] > 0)
        assert not n.target[~fg].any() and not n.image[~fg].any()
        assert np.all((n.image >= 0) & (n.image <= 1))


def test_split_beta():
    s, r = split_beta(DEFAULT)
    assert s.size == 29 and r.size == 22


# --- pipeline and datasets ------------------------------------------------------------------

def test_generate_dataset_contracts():
    pipe = CsgPipeline(resolution=(8, 8))
    seeds = seed_range(12, 0, 3)
    one = generate_dataset(pipe, DEFAULT, seeds[:1])
    assert one[0].equals(pipe(DEFAULT, seeds[0]))
    a, b = generate_dataset(pipe, DEFAULT, seeds), generate_dataset(pipe, DEFAULT, seeds)
    assert all(x.equals(y) for x, y in zip(a, b))
    changed = generate_dataset(pipe, DEFAULT, [seeds[0], SeedString(99, 99), seeds[2]])
    assert changed[0].equals(a[0]) and changed[2].equals(a[2]) and not changed[1].equals(a[1])
    with pytest.raises(ValueError):
        generate_dataset(pipe, DEFAULT, [])


def test_container_round_trip(tmp_path):
    pipe = CsgPipeline(resolution=(8, 8))
    samples = generate_dataset(pipe, DEFAULT, seed_range(13, 0, 3))
    container.write_samples(tmp_path / "set.bin", samples)
    back = container.read_samples(tmp_path / "set.bin")
    assert len(back) == 3 and all(a.equals(b) for a, b in zip(samples, back))
    header = container.read_header(tmp_path / "set.bin")
    assert header["fields"] == ["image", "target", "mask"] and header["dtype"] == "<f8"
    container.write_sample(tmp_path / "one.bin", samples[0])
    assert container.read_sample(tmp_path / "one.bin").equals(samples[0])
    (tmp_path / "junk.bin").write_bytes(b"\x03\x00\x00\x00\x00\x00\x00\x00abc")
    with pytest.raises(container.ContainerError):
        container.read_samples(tmp_path / "junk.bin")


# --- toy pipeline -----------------------------------------------------------------------------

def test_toy_jacobian_matches_finite_differences():
    toy = ToyPipeline()
    rng = np.random.default_rng(0)
    for k in range(5):
        beta = TOY_LAYOUT.clip(TOY_LAYOUT.default().values + rng.uniform(-0.2, 0.2, 6))
        seed = SeedString(3, k)
        jac = toy.jacobian(beta, seed)
        fd = np.zeros_like(jac)
        for j in range(6):
            e = np.zeros(6)
            e[j] = 1e-6
            fd[:, j] = (toy(beta + e, seed).flatten() - toy(beta - e, seed).flatten()) / 2e-6
        assert rel_err(jac, fd) <= 1e-6


def test_toy_center_shift_translates_blob():
    toy = ToyPipeline(resolution=(8, 8))
    beta = TOY_LAYOUT.default().values
    shifted = beta.copy()
    shifted[TOY_LAYOUT.index("blob.center_x")] += 2.0 / 8  # one pixel
    seed = SeedString(1, 1)
    a, b = toy(beta, seed).image[..., 0], toy(shifted, seed).image[..., 0]
    np.testing.assert_allclose(b[:, 1:], a[:, :-1], atol=1e-12)


def test_toy_width_floor():
    beta = TOY_LAYOUT.default().values
    beta[TOY_LAYOUT.index("blob.width")] = 0.0
    clipped = clip_to_valid(TOY_LAYOUT.vector(beta))
    assert clipped["blob.width"] == TOY_LAYOUT.lower[TOY_LAYOUT.index("blob.width")] > 0


def test_sample_validation():
    with pytest.raises(ValueError):
        Sample(np.zeros((2, 2, 1)), np.zeros((3, 2, 3)), np.ones((2, 2), bool))
