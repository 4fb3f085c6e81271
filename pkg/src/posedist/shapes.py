"""Small synthetic meshes used by tests, fixtures and benchmarks."""

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import TriangleMesh


def _outward(V, F):
    c = V.mean(axis=0)
    T = V[F]
    n = np.cross(T[:, 1] - T[:, 0], T[:, 2] - T[:, 0])
    flip = np.einsum("ij,ij->i", n, T.mean(axis=1) - c) < 0
    F = F.copy()
    F[flip] = F[flip][:, ::-1]
    return F


def convex_mesh(points) -> TriangleMesh:
    """Outward-oriented hull of ``points`` (only valid for convex shapes)."""
    points = np.asarray(points, dtype=np.float64)
    hull = ConvexHull(points)
    used = np.unique(hull.simplices)
    remap = -np.ones(len(points), dtype=np.int64)
    remap[used] = np.arange(len(used))
    V = points[used]
    F = remap[hull.simplices]
    return TriangleMesh(V, _outward(V, F))


def box(sx, sy, sz) -> TriangleMesh:
    c = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    return convex_mesh(c * (np.array([sx, sy, sz]) / 2.0))


def chamfered_cube(side: float, chamfer: float, corner=(1, 1, 1)) -> TriangleMesh:
    """Cube centred at the origin with one corner cut ``chamfer`` mm along its three edges."""
    a = side / 2.0
    corner = np.sign(np.asarray(corner, dtype=np.float64))
    pts = [np.array([x, y, z]) * a for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]
    pts = [p for p in pts if not np.allclose(p, corner * a)]
    for k in range(3):
        q = corner * a
        q[k] -= corner[k] * chamfer
        pts.append(q)
    return convex_mesh(np.array(pts))


def cylinder(radius: float, height: float, segments: int = 256) -> TriangleMesh:
    """Closed cylinder along z, centred at the origin."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    n = segments
    V = np.concatenate([
        np.column_stack([ring, np.full(n, -height / 2)]),
        np.column_stack([ring, np.full(n, height / 2)]),
        [[0, 0, -height / 2], [0, 0, height / 2]],
    ])
    F = []
    for i in range(n):
        j = (i + 1) % n
        F += [(i, j, n + j), (i, n + j, n + i), (2 * n, j, i), (2 * n + 1, n + i, n + j)]
    return TriangleMesh(V, np.array(F))


def uv_sphere(radius: float, n_lat: int = 64, n_lon: int = 128) -> TriangleMesh:
    th = np.linspace(0, np.pi, n_lat + 1)[1:-1]
    ph = 2 * np.pi * np.arange(n_lon) / n_lon
    T, P = np.meshgrid(th, ph, indexing="ij")
    ring = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    V = np.concatenate([[[0, 0, 1]], ring, [[0, 0, -1]]]) * radius
    return convex_mesh(V)


def _ear_clip(poly):
    poly = [tuple(p) for p in poly]
    idx = list(range(len(poly)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    while len(idx) > 3:
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if cross(a, b, c) <= 0:
                continue
            if any(cross(a, b, poly[m]) >= 0 and cross(b, c, poly[m]) >= 0 and cross(c, a, poly[m]) >= 0
                   for m in idx if m not in (i0, i1, i2)):
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            break
        else:
            raise ValueError("polygon is not simple or not counter-clockwise")
    tris.append(tuple(idx))
    return tris


def extrude(polygon, height: float) -> TriangleMesh:
    """Prism over a simple counter-clockwise polygon in the xy plane, z in [-h/2, h/2]."""
    P = np.asarray(polygon, dtype=np.float64)
    n = len(P)
    V = np.concatenate([np.column_stack([P, np.full(n, -height / 2)]),
                        np.column_stack([P, np.full(n, height / 2)])])
    F = []
    for a, b, c in _ear_clip(P):
        F.append((n + a, n + b, n + c))
        F.append((c, b, a))
    for i in range(n):
        j = (i + 1) % n
        F += [(i, j, n + j), (i, n + j, n + i)]
    return TriangleMesh(V, np.array(F))


def l_shape(long_arm=40.0, short_arm=24.0, width=10.0, height=8.0) -> TriangleMesh:
    """L-profile prism with unequal arms: no proper rotational symmetry."""
    poly = [(0, 0), (long_arm, 0), (long_arm, width), (width, width), (width, short_arm), (0, short_arm)]
    P = np.asarray(poly, dtype=np.float64)
    P -= P.mean(axis=0)
    return extrude(P, height)
