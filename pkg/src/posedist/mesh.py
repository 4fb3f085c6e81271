"""Triangle meshes: PLY I/O and uniform surface sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from plyfile import PlyData, PlyElement

from .geom import PointSet
from .kernels import poisson_select

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    vertex_colors: Optional[np.ndarray] = None
    # either per-vertex (V, 2) or per-face-corner (F, 3, 2) texture coords
    uv: Optional[np.ndarray] = None
    texture: Optional[np.ndarray] = None

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        F = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise ValueError("face index out of range")
        uv = self.uv
        if len(F):
            areas = triangle_areas(V, F)
            keep = areas > DEGENERATE_AREA
            if not keep.all():
                log.debug("dropping %d degenerate triangles", int((~keep).sum()))
                F = F[keep]
                if uv is not None and np.ndim(uv) == 3:
                    uv = np.asarray(uv)[keep]
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "faces", F)
        object.__setattr__(self, "uv", uv)
        if self.vertex_colors is not None:
            object.__setattr__(self, "vertex_colors",
                               np.asarray(self.vertex_colors, dtype=np.float64).reshape(-1, 3))

    @property
    def has_color(self) -> bool:
        return self.vertex_colors is not None or (self.uv is not None and self.texture is not None)

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def area(self) -> float:
        return float(triangle_areas(self.vertices, self.faces).sum())

    def radius(self) -> float:
        """Bounding-sphere radius about the origin of model coordinates."""
        return float(np.linalg.norm(self.vertices, axis=1).max()) if len(self.vertices) else 0.0


def triangle_areas(V, F) -> np.ndarray:
    T = V[F]
    return 0.5 * np.linalg.norm(np.cross(T[:, 1] - T[:, 0], T[:, 2] - T[:, 0]), axis=1)


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

def read_ply(path) -> TriangleMesh:
    """Read a BOP-style PLY model (ASCII or binary), vertex colours or texture."""
    path = Path(path)
    ply = PlyData.read(str(path))
    v = ply["vertex"].data
    names = v.dtype.names
    V = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)

    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.float64)
        if colors.max(initial=0) > 1.0:
            colors /= 255.0

    uv = None
    for un, vn in (("texture_u", "texture_v"), ("s", "t"), ("u", "v")):
        if un in names and vn in names:
            uv = np.stack([v[un], v[vn]], axis=1).astype(np.float64)
            break

    faces = np.zeros((0, 3), dtype=np.int64)
    if "face" in ply:
        f = ply["face"].data
        key = "vertex_indices" if "vertex_indices" in f.dtype.names else "vertex_index"
        idx = [np.asarray(x, dtype=np.int64) for x in f[key]]
        tris = []
        corner_uv = []
        tc = f["texcoord"] if "texcoord" in f.dtype.names else None
        for k, poly in enumerate(idx):
            # fan-triangulate polygons
            for j in range(1, len(poly) - 1):
                tris.append((poly[0], poly[j], poly[j + 1]))
                if tc is not None:
                    c = np.asarray(tc[k], dtype=np.float64).reshape(-1, 2)
                    corner_uv.append(c[[0, j, j + 1]])
        if tris:
            faces = np.asarray(tris, dtype=np.int64)
        if tc is not None and corner_uv:
            uv = np.asarray(corner_uv)

    texture = None
    if uv is not None:
        for c in ply.comments:
            parts = c.split()
            if len(parts) >= 2 and parts[0].lower() == "texturefile":
                tex_path = path.parent / parts[1]
                if tex_path.exists():
                    from PIL import Image
                    texture = np.asarray(Image.open(tex_path).convert("RGB"), dtype=np.float64) / 255.0
                break
    if texture is None and (uv is not None and np.ndim(uv) == 3):
        uv = None
    return TriangleMesh(V, faces, colors, uv if texture is not None else None, texture)


def write_ply(path, mesh: TriangleMesh, binary: bool = False) -> None:
    cols = [("x", "f4"), ("y", "f4"), ("z", "f4")]
    if mesh.vertex_colors is not None:
        cols += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    vert = np.empty(len(mesh.vertices), dtype=cols)
    vert["x"], vert["y"], vert["z"] = mesh.vertices.T
    if mesh.vertex_colors is not None:
        c = np.round(np.clip(mesh.vertex_colors, 0, 1) * 255).astype(np.uint8)
        vert["red"], vert["green"], vert["blue"] = c.T
    face = np.empty(len(mesh.faces), dtype=[("vertex_indices", "i4", (3,))])
    face["vertex_indices"] = mesh.faces
    data = PlyData([PlyElement.describe(vert, "vertex"), PlyElement.describe(face, "face")],
                   text=not binary, byte_order="<")
    data.write(str(path))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _bary_grid(n: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    m = (i + j) <= n
    b1 = i[m] / n
    b2 = j[m] / n
    return np.stack([1.0 - b1 - b2, b1, b2], axis=1)


def _texture_lookup(tex, uv):
    H, W = tex.shape[:2]
    x = np.clip(np.round(uv[:, 0] * (W - 1)), 0, W - 1).astype(np.int64)
    y = np.clip(np.round((1.0 - uv[:, 1]) * (H - 1)), 0, H - 1).astype(np.int64)
    return tex[y, x, :3]


def candidate_cloud(mesh: TriangleMesh, spacing: float):
    """Dense barycentric node cloud: every surface point lies within ``spacing`` of a node.

    Each triangle is split into n^2 similar sub-triangles whose longest edge is
    at most ``spacing``. Returns node positions, colours (or None), and the
    source triangle of each node.
    """
    T = mesh.triangles()
    edges = np.stack([np.linalg.norm(T[:, 1] - T[:, 0], axis=1),
                      np.linalg.norm(T[:, 2] - T[:, 1], axis=1),
                      np.linalg.norm(T[:, 0] - T[:, 2], axis=1)], axis=1)
    ns = np.maximum(1, np.ceil(edges.max(axis=1) / spacing).astype(np.int64))
    pos, col, src = [], [], []
    for n in np.unique(ns):
        tri_ids = np.flatnonzero(ns == n)
        B = _bary_grid(int(n))
        pos.append(np.einsum("mk,tkd->tmd", B, T[tri_ids]).reshape(-1, 3))
        src.append(np.repeat(tri_ids, len(B)))
        if mesh.vertex_colors is not None:
            C = mesh.vertex_colors[mesh.faces[tri_ids]]
            col.append(np.einsum("mk,tkd->tmd", B, C).reshape(-1, 3))
        elif mesh.uv is not None and mesh.texture is not None:
            if np.ndim(mesh.uv) == 3:
                UV = mesh.uv[tri_ids]
            else:
                UV = mesh.uv[mesh.faces[tri_ids]]
            uv = np.einsum("mk,tkd->tmd", B, UV).reshape(-1, 2)
            col.append(_texture_lookup(mesh.texture, uv))
    positions = np.concatenate(pos)
    colors = np.clip(np.concatenate(col), 0.0, 1.0) if col else None
    return positions, colors, np.concatenate(src)


def sample_surface(mesh: TriangleMesh, resolution: float, seed: int = 0) -> PointSet:
    """Uniform surface sample with no coverage hole wider than ``resolution``.

    Dart throwing at minimum spacing ``resolution / 2`` over a node cloud of
    spacing ``resolution / 4``; every surface point ends up within
    ``0.75 * resolution`` of a sample. Visiting order is drawn from ``seed``.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if len(mesh.faces) == 0:
        raise ValueError("cannot sample an empty mesh")
    nodes, colors, _ = candidate_cloud(mesh, resolution / 4.0)
    order = np.random.default_rng(seed).permutation(len(nodes))
    keep = poisson_select(nodes, order, resolution / 2.0)
    pts = nodes[keep]
    cols = colors[keep] if colors is not None else None
    return PointSet(pts, cols)
