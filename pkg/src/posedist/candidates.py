"""Finite symmetry-candidate sets built from a per-object symmetry proposal."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geom import RigidTransform, compose, rotation_angle, stack

DEFAULT_STEPS = 360
AXIS_TOL = 1e-6


@dataclass(frozen=True)
class ContinuousSymmetry:
    axis: np.ndarray
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class SymmetrySpec:
    discrete: Sequence[RigidTransform] = ()
    continuous: Sequence[ContinuousSymmetry] = ()

    def __post_init__(self):
        for c in self.continuous:
            if abs(np.linalg.norm(c.axis) - 1.0) > AXIS_TOL:
                raise ValueError(f"continuous symmetry axis {list(c.axis)} is not unit length")

    @classmethod
    def from_models_info(cls, info: dict) -> "SymmetrySpec":
        """Parse one ``models_info.json`` entry (flattened 4x4 row-major, mm)."""
        disc = [RigidTransform.from_matrix(np.asarray(m, dtype=np.float64).reshape(4, 4))
                for m in info.get("symmetries_discrete", [])]
        cont = [ContinuousSymmetry(np.asarray(s["axis"], dtype=np.float64),
                                   np.asarray(s.get("offset", [0, 0, 0]), dtype=np.float64))
                for s in info.get("symmetries_continuous", [])]
        return cls(disc, cont)


class CandidateSet:
    """Ordered candidate transforms; index 0 is exactly the identity."""

    def __init__(self, transforms: Sequence[RigidTransform]):
        if not transforms:
            raise ValueError("empty candidate set")
        T0 = transforms[0]
        if not (np.array_equal(T0.R, np.eye(3)) and np.array_equal(T0.t, np.zeros(3))):
            raise ValueError("candidate 0 must be the identity")
        self.transforms = tuple(transforms)
        self.Rs, self.ts = stack(self.transforms)
        self.Rs.flags.writeable = False
        self.ts.flags.writeable = False
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.Rs, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.ts, dtype="<f8").tobytes())
        self.hash = h.hexdigest()

    def __len__(self):
        return len(self.transforms)

    def __getitem__(self, i):
        return self.transforms[i]

    def __iter__(self):
        return iter(self.transforms)


def candidate_distance(a: RigidTransform, b: RigidTransform, scale: float) -> float:
    """Rotation geodesic angle times ``scale`` (mm/rad) plus translation gap (mm)."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    return rotation_angle(a.R.T @ b.R) * scale + float(np.linalg.norm(a.t - b.t))


def _pairwise_distance(Rs, ts, R, t, scale):
    # trace(R_i^T R) without forming the products
    tr = np.einsum("kij,ij->k", Rs, R)
    ang = np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))
    return ang * scale + np.linalg.norm(ts - t, axis=1)


def dedup(transforms: Sequence[RigidTransform], threshold: float, scale: float) -> list:
    """Drop every transform closer than ``threshold`` to one kept before it."""
    kept = []
    Rs = np.zeros((len(transforms), 3, 3))
    ts = np.zeros((len(transforms), 3))
    for T in transforms:
        n = len(kept)
        if n and _pairwise_distance(Rs[:n], ts[:n], T.R, T.t, scale).min() < threshold:
            continue
        Rs[n], ts[n] = T.R, T.t
        kept.append(T)
    return kept


def discretize_continuous(sym: ContinuousSymmetry, steps_per_turn: int) -> list:
    return [RigidTransform.from_axis_angle(sym.axis, 2 * np.pi * k / steps_per_turn, sym.offset)
            for k in range(1, steps_per_turn)]


def build_candidates(spec: SymmetrySpec, steps_per_turn: int = DEFAULT_STEPS, *,
                     mode: str = "union", epsilon: float = 1.0,
                     scale: float = 50.0) -> CandidateSet:
    """Candidate set {Id} + discrete + discretized continuous symmetries.

    ``mode="union"`` discretizes each continuous axis independently and unites
    the result with the discrete list. ``mode="product"`` also adds every
    composition continuous ∘ discrete. Duplicates closer than ``epsilon / 2``
    under :func:`candidate_distance` (with ``scale`` = object radius) are
    removed, keeping first occurrences so the identity stays at index 0.
    """
    if mode not in ("union", "product"):
        raise ValueError(f"unknown candidate mode {mode!r}")
    for c in spec.continuous:
        if abs(np.linalg.norm(c.axis) - 1.0) > AXIS_TOL:
            raise ValueError("continuous symmetry axis is not unit length")
    if spec.continuous and steps_per_turn < 2:
        raise ValueError("steps_per_turn must be >= 2 with continuous symmetries")

    cont = []
    for c in spec.continuous:
        cont.extend(discretize_continuous(c, steps_per_turn))
    ordered = [RigidTransform.identity()] + list(spec.discrete) + cont
    if mode == "product":
        for d in spec.discrete:
            for c in cont:
                ordered.append(compose(c, d))
    return CandidateSet(dedup(ordered, epsilon / 2.0, scale))
