import numpy as np
import pytest

from conftest import random_transform
from oracles import ray_cast_visible
from posedist import shapes
from posedist.geom import CameraModel, RigidTransform
from posedist.mesh import TriangleMesh, sample_surface
from posedist.visibility import SceneInstance, render_scene_depth, visible_vertices

CAM = CameraModel(400, 400, 80, 60, 160, 120)


def at(x, y, z, R=None):
    return RigidTransform(np.eye(3) if R is None else R, [x, y, z])


def test_empty_scene():
    d = render_scene_depth([], {}, CAM)
    assert d.depth.shape == (120, 160) and not d.depth.any()
    pts = sample_surface(shapes.box(10, 10, 10), 1.0)
    assert len(visible_vertices(SceneInstance(1, at(0, 0, 300)), pts, d)) == 0


def test_square_depth_rect():
    V = np.array([[-10, -10, 0], [10, -10, 0], [10, 10, 0], [-10, 10, 0]], dtype=float)
    quad = TriangleMesh(V, np.array([[0, 1, 2], [0, 2, 3]]))
    d = render_scene_depth([SceneInstance(1, at(0, 0, 100))], {1: quad}, CAM).depth
    # the quad spans u, v in [40, 120] x [20, 100]; pixel centres inside are covered
    expect = np.zeros_like(d, dtype=bool)
    expect[20:100, 40:120] = True
    assert np.array_equal(d > 0, expect)
    np.testing.assert_allclose(d[expect], 100.0, rtol=1e-12)


def test_overlapping_squares_take_nearest():
    V = np.array([[-10, -10, 0], [10, -10, 0], [10, 10, 0], [-10, 10, 0]], dtype=float)
    quad = TriangleMesh(V, np.array([[0, 1, 2], [0, 2, 3]]))
    far = SceneInstance(1, at(0, 0, 100), 0)
    near = SceneInstance(1, at(2.5, 0, 50), 1)
    d = render_scene_depth([far, near], {1: quad}, CAM).depth
    # near square covers u in [0, 180) clipped to the image, v in [-20, 140)
    np.testing.assert_allclose(d[:, 100:], 50.0, rtol=1e-12)
    np.testing.assert_allclose(d[20:100, 40:120], 50.0, rtol=1e-12)


def test_half_overlap():
    V = np.array([[-5, -5, 0], [5, -5, 0], [5, 5, 0], [-5, 5, 0]], dtype=float)
    quad = TriangleMesh(V, np.array([[0, 1, 2], [0, 2, 3]]))
    pts = sample_surface(quad, 0.25, seed=0)
    back = SceneInstance(1, at(0, 0, 400), 0)
    front = SceneInstance(1, at(5, 0, 300), 1)    # covers x >= 0 of the back quad in image space
    d = render_scene_depth([back, front], {1: quad}, CAM)
    vis = visible_vertices(back, pts, d)
    frac = len(vis) / len(pts)
    # front quad spans u in [80, 133.3]: back quad pixels u in [75, 85) stay free on the left
    expect = (pts.positions[:, 0] * 400 / 400 + 80 < 80)
    assert abs(frac - expect.mean()) < 0.03
    assert abs(frac - 0.5) < 0.05


def test_behind_wall():
    meshes = {1: shapes.box(10, 10, 10), 2: shapes.box(400, 400, 5)}
    obj = SceneInstance(1, at(0, 0, 500))
    wall = SceneInstance(2, at(0, 0, 200))
    d = render_scene_depth([obj, wall], meshes, CAM)
    assert len(visible_vertices(obj, sample_surface(meshes[1], 1.0), d)) == 0


def test_missing_mesh():
    with pytest.raises(KeyError):
        render_scene_depth([SceneInstance(9, at(0, 0, 100))], {}, CAM)


def test_sphere_front_half():
    cam = CameraModel(20000, 20000, 240, 240, 480, 480)
    m = shapes.uv_sphere(50.0, 96, 192)
    pts = sample_surface(m, 1.0)
    inst = SceneInstance(1, at(0, 0, 5000))
    vis = visible_vertices(inst, pts, render_scene_depth([inst], {1: m}, cam))
    # the visible cap from distance D covers (1 - r / D) / 2 of the sphere
    assert abs(len(vis) / len(pts) - 0.495) < 0.02


def _ray_agreement(insts, meshes, cam, res=0.5):
    depth = render_scene_depth(insts, meshes, cam)
    tris = np.concatenate([i.gt_pose.apply(meshes[i.obj_id].vertices)[meshes[i.obj_id].faces]
                           for i in insts])
    rates = []
    for inst in insts:
        pts = sample_surface(meshes[inst.obj_id], res)
        got = np.zeros(len(pts), dtype=bool)
        got[visible_vertices(inst, pts, depth)] = True
        ref = ray_cast_visible(inst.gt_pose.apply(pts.positions), tris, depth_tol=2.0)
        assert ref.any() and (~ref).any()
        rates.append((got == ref).mean())
    return rates


def test_convex_matches_ray_casting(rng):
    cam = CameraModel(3200, 3200, 640, 480, 1280, 960)
    meshes = {1: shapes.box(40, 30, 20)}
    for _ in range(5):
        inst = SceneInstance(1, RigidTransform(random_transform(rng).R, [0, 0, 400]))
        assert _ray_agreement([inst], meshes, cam, res=1.0)[0] >= 0.99


def test_random_hulls_match_ray_casting(rng):
    # a face within a few degrees of edge-on changes depth by more than the
    # tolerance inside one pixel; the per-pixel test then disagrees on it
    cam = CameraModel(3200, 3200, 640, 480, 1280, 960)
    rates = []
    for _ in range(6):
        meshes = {1: shapes.convex_mesh(rng.normal(size=(40, 3)) * [20, 14, 10])}
        inst = SceneInstance(1, RigidTransform(random_transform(rng).R, [0, 0, 400]))
        rates += _ray_agreement([inst], meshes, cam, res=1.0)
    assert np.median(rates) >= 0.99
    assert min(rates) >= 0.9


def test_occluded_scene_matches_ray_casting(rng):
    meshes = {1: shapes.l_shape(30, 20, 8, 6), 2: shapes.box(12, 12, 12)}
    insts = [SceneInstance(1, RigidTransform(random_transform(rng).R, [0, 0, 320]), 0),
             SceneInstance(2, RigidTransform(random_transform(rng).R, [8, 4, 280]), 1)]
    cam = CameraModel(3200, 3200, 640, 480, 1280, 960)
    assert min(_ray_agreement(insts, meshes, cam)) >= 0.99


def test_occluder_monotone(rng):
    meshes = {1: shapes.cylinder(10, 20, 64), 2: shapes.box(15, 15, 15)}
    pts = sample_surface(meshes[1], 1.0)
    obj = SceneInstance(1, RigidTransform(random_transform(rng).R, [0, 0, 400]))
    alone = visible_vertices(obj, pts, render_scene_depth([obj], meshes, CAM))
    for _ in range(5):
        occ = SceneInstance(2, RigidTransform(random_transform(rng).R, [*rng.uniform(-15, 15, 2), 300]), 1)
        both = visible_vertices(obj, pts, render_scene_depth([obj, occ], meshes, CAM))
        assert set(both.tolist()) <= set(alone.tolist())


def test_visible_in_front_of_camera():
    m = shapes.box(200, 200, 200)
    pts = sample_surface(m, 4.0)
    inst = SceneInstance(1, at(0, 0, 50))   # camera sits inside the box
    vis = visible_vertices(inst, pts, render_scene_depth([inst], {1: m}, CAM))
    assert (inst.gt_pose.apply(pts.positions)[vis, 2] > 0).all()
    assert len(vis) > 0


def test_mask_restricts():
    m = shapes.box(20, 20, 20)
    pts = sample_surface(m, 1.0)
    inst = SceneInstance(1, at(0, 0, 200))
    depth = render_scene_depth([inst], {1: m}, CAM)
    full = visible_vertices(inst, pts, depth)
    mask = np.zeros((120, 160), dtype=bool)
    mask[:, :80] = True
    part = visible_vertices(inst, pts, depth, mask=mask)
    assert set(part.tolist()) < set(full.tolist())
    P = inst.gt_pose.apply(pts.positions[part])
    assert (400 * P[:, 0] / P[:, 2] + 80 < 80).all()
