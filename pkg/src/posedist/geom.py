"""Rigid transforms, point sets, pinhole camera and an exact surface NN index.

Units are millimetres for lengths and pixels for image coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

ORTHO_TOL = 1e-6


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) element acting as ``x -> R @ x + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = _frozen(self.R).reshape(3, 3)
        t = _frozen(self.t).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite rigid transform")
        if np.abs(R @ R.T - np.eye(3)).max() > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=np.float64).reshape(4, 4)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_axis_angle(cls, axis, angle: float, offset=None) -> "RigidTransform":
        """Rotation by ``angle`` radians about the line through ``offset`` along ``axis``."""
        axis = np.asarray(axis, dtype=np.float64)
        R = Rotation.from_rotvec(axis / np.linalg.norm(axis) * angle).as_matrix()
        if offset is None:
            return cls(R, np.zeros(3))
        offset = np.asarray(offset, dtype=np.float64)
        return cls(R, offset - R @ offset)

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.R.T + self.t

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def __repr__(self):
        return f"RigidTransform(R={self.R.tolist()}, t={self.t.tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying ``b`` first, then ``a``."""
    return RigidTransform(a.R @ b.R, a.R @ b.t + a.t)


def invert(a: RigidTransform) -> RigidTransform:
    return RigidTransform(a.R.T, -(a.R.T @ a.t))


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix in radians."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def stack(transforms) -> tuple[np.ndarray, np.ndarray]:
    """(K, 3, 3) rotations and (K, 3) translations of a transform list."""
    if len(transforms) == 0:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    return (np.stack([T.R for T in transforms]), np.stack([T.t for T in transforms]))


def quat_from_matrix(R) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0."""
    x, y, z, w = Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat()
    q = np.array([w, x, y, z])
    if q[0] < 0:
        q = -q
    return q


def matrix_from_quat(q) -> np.ndarray:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


@dataclass(frozen=True, eq=False)
class PointSet:
    positions: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = _frozen(self.positions).reshape(-1, 3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("non-finite point positions")
        object.__setattr__(self, "positions", pos)
        if self.colors is not None:
            col = _frozen(self.colors).reshape(-1, 3)
            if len(col) != len(pos):
                raise ValueError("colors and positions differ in length")
            object.__setattr__(self, "colors", col)

    def __len__(self):
        return len(self.positions)

    def subset(self, idx) -> "PointSet":
        cols = None if self.colors is None else self.colors[idx]
        return PointSet(self.positions[idx], cols)


def transform_points(t: RigidTransform, p: PointSet) -> PointSet:
    return PointSet(t.apply(p.positions), p.colors)


class SurfaceIndex:
    """Exact nearest-neighbour index over a model point set (k-d tree)."""

    def __init__(self, points: PointSet):
        self.points = points
        self._tree = cKDTree(points.positions) if len(points) else None

    def __len__(self):
        return len(self.points)

    def query(self, q, workers: int = 1):
        """Distances and indices of the nearest indexed point for each row of ``q``."""
        if self._tree is None:
            raise ValueError("nearest-neighbour query on an empty index")
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        d, i = self._tree.query(q, k=1, workers=workers)
        return d, i

    def nearest_distance(self, p) -> float:
        d, _ = self.query(np.asarray(p).reshape(1, 3))
        return float(d[0])


def nearest_distance(index: SurfaceIndex, p) -> float:
    return index.nearest_distance(p)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")

    @classmethod
    def from_K(cls, K, width: int, height: int) -> "CameraModel":
        K = np.asarray(K, dtype=np.float64).reshape(3, 3)
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]),
                   int(width), int(height))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def project(cam: CameraModel, p) -> np.ndarray:
    """Pinhole projection of one point or an (N, 3) array; raises behind the camera."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise ValueError("point behind the camera (z <= 0)")
    return np.stack([cam.fx * p[..., 0] / z + cam.cx, cam.fy * p[..., 1] / z + cam.cy], axis=-1)


def unproject(cam: CameraModel, uv, depth) -> np.ndarray:
    uv = np.asarray(uv, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    x = (uv[..., 0] - cam.cx) * depth / cam.fx
    y = (uv[..., 1] - cam.cy) * depth / cam.fy
    return np.stack([x, y, depth], axis=-1)
