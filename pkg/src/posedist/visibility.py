"""CPU Z-buffer of a whole scene and per-instance visible sample extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .geom import CameraModel, PointSet, RigidTransform
from .mesh import TriangleMesh

NEAR_PLANE = 1.0  # mm
DEFAULT_DEPTH_TOL = 2.0
DEFAULT_VIS_FLOOR = 0.01


@dataclass(frozen=True, eq=False)
class DepthMap:
    depth: np.ndarray   # (H, W) mm, 0 = empty
    camera: CameraModel


@dataclass(frozen=True, eq=False)
class SceneInstance:
    obj_id: int
    gt_pose: RigidTransform   # model -> camera
    inst_id: int = 0


def _clip_near(tris: np.ndarray, near: float) -> np.ndarray:
    """Clip camera-space triangles (T, 3, 3) against the plane z = near."""
    inside = tris[:, :, 2] >= near
    n_in = inside.sum(axis=1)
    out = [tris[n_in == 3]]
    for tri in tris[(n_in > 0) & (n_in < 3)]:
        poly = []
        for a in range(3):
            p, q = tri[a], tri[(a + 1) % 3]
            pin, qin = p[2] >= near, q[2] >= near
            if pin:
                poly.append(p)
            if pin != qin:
                s = (near - p[2]) / (q[2] - p[2])
                x = p + s * (q - p)
                x[2] = near
                poly.append(x)
        for j in range(1, len(poly) - 1):
            out.append(np.stack([poly[0], poly[j], poly[j + 1]])[None])
    return np.concatenate(out) if out else np.zeros((0, 3, 3))


def _screen_tris(cam_tris: np.ndarray, cam: CameraModel) -> np.ndarray:
    z = cam_tris[:, :, 2]
    u = cam.fx * cam_tris[:, :, 0] / z + cam.cx
    v = cam.fy * cam_tris[:, :, 1] / z + cam.cy
    return np.stack([u, v, z], axis=-1)


def render_scene_depth(instances: Sequence[SceneInstance], meshes: Mapping[int, TriangleMesh],
                       cam: CameraModel, near: float = NEAR_PLANE) -> DepthMap:
    """Per-pixel minimum depth over every triangle of every instance."""
    depth = np.zeros((cam.height, cam.width), dtype=np.float64)
    for inst in instances:
        if inst.obj_id not in meshes:
            raise KeyError(f"no mesh for object {inst.obj_id}")
        mesh = meshes[inst.obj_id]
        V = inst.gt_pose.apply(mesh.vertices)
        tris = _clip_near(V[mesh.faces], near)
        if len(tris):
            kernels.rasterize_depth(_screen_tris(tris, cam), depth)
    depth.flags.writeable = False
    return DepthMap(depth, cam)


def visible_vertices(inst: SceneInstance, samples: PointSet, depth: DepthMap,
                     depth_tol: float = DEFAULT_DEPTH_TOL,
                     mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Sorted indices of samples that are in view and not behind the Z-buffer.

    A sample whose own pixel is empty (it sits on a silhouette edge) is tested
    against the nearest covered pixel among the four centres around it.
    ``mask`` optionally restricts to pixels set in a (H, W) boolean image, e.g.
    a dataset-provided visibility mask.
    """
    cam = depth.camera
    P = inst.gt_pose.apply(samples.positions)
    z = P[:, 2]
    front = z > 0
    idx = np.flatnonzero(front)
    if len(idx) == 0:
        return idx
    u = cam.fx * P[idx, 0] / z[idx] + cam.cx
    v = cam.fy * P[idx, 1] / z[idx] + cam.cy
    inb = (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    idx, u, v = idx[inb], u[inb], v[inb]
    px = np.floor(u).astype(np.int64)
    py = np.floor(v).astype(np.int64)
    D = depth.depth
    d = D[py, px]
    edge = np.flatnonzero(d == 0)
    if len(edge):
        x0 = np.floor(u[edge] - 0.5).astype(np.int64)
        y0 = np.floor(v[edge] - 0.5).astype(np.int64)
        near = np.full(len(edge), np.inf)
        for dx in (0, 1):
            for dy in (0, 1):
                n = D[np.clip(y0 + dy, 0, cam.height - 1), np.clip(x0 + dx, 0, cam.width - 1)]
                near = np.minimum(near, np.where(n > 0, n, np.inf))
        d = d.copy()
        d[edge] = np.where(np.isfinite(near), near, 0.0)
    ok = (d > 0) & (z[idx] <= d + depth_tol)
    if mask is not None:
        ok &= np.asarray(mask, dtype=bool)[py, px]
    return idx[ok]
