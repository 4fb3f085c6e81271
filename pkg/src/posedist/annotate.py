"""Per-instance symmetry pattern: histogram over candidates and soft intersection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .candidates import CandidateSet
from .geom import RigidTransform, compose
from .patterns import PatternTable
from .visibility import SceneInstance

log = logging.getLogger(__name__)

DEFAULT_TAU = 28
DEFAULT_EPSILON = 1.0
DEFAULT_RESOLUTION = 0.5
SKIP_OCCLUDED = "fully_occluded"


@dataclass(frozen=True, eq=False)
class SymmetryHistogram:
    counts: np.ndarray
    n_visible: int


@dataclass(eq=False)
class InstanceDistribution:
    scene_id: int
    im_id: int
    obj_id: int
    inst_idx: int
    gt_pose: RigidTransform
    syms: list                       # accepted candidate transforms T_i
    accepted: Optional[list] = None  # their candidate indices, when known
    tau: int = DEFAULT_TAU
    n_visible: int = 0
    skipped: Optional[str] = None
    poses: list = field(init=False)

    def __post_init__(self):
        self.poses = [compose(self.gt_pose, S) for S in self.syms]

    @property
    def key(self):
        return (self.scene_id, self.im_id, self.obj_id, self.inst_idx)


def build_histogram(table: PatternTable, visible) -> SymmetryHistogram:
    visible = np.asarray(visible, dtype=np.int64)
    if len(visible) and (visible.min() < 0 or visible.max() >= table.n_rows):
        raise IndexError("visible index outside the pattern table")
    return SymmetryHistogram(table.column_counts(visible), int(len(visible)))


def soft_intersect(h: SymmetryHistogram, tau: int) -> np.ndarray:
    """Indices of candidates supported by all but fewer than ``tau`` visible samples.

    For ``tau >= 1`` this keeps H(T_i) > H(Id) - tau. ``tau = 0`` is the strict
    intersection H(T_i) = H(Id), which keeps everything when nothing is visible.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    n = h.n_visible
    if tau == 0:
        keep = h.counts >= n
    else:
        keep = h.counts > n - tau
    return np.flatnonzero(keep)


def annotate_instance(inst: SceneInstance, table: PatternTable, visible, cands: CandidateSet,
                      tau: int = DEFAULT_TAU, *, scene_id: int = 0, im_id: int = 0,
                      n_samples: Optional[int] = None, vis_floor: float = 0.0) -> InstanceDistribution:
    if table.cand_hash != cands.hash or table.n_cands != len(cands):
        raise ValueError("pattern table was built for a different candidate set")
    visible = np.asarray(visible, dtype=np.int64)
    n_samples = table.n_rows if n_samples is None else n_samples
    n_vis = len(visible)
    if n_vis == 0 or n_vis < vis_floor * n_samples:
        return InstanceDistribution(scene_id, im_id, inst.obj_id, inst.inst_id, inst.gt_pose,
                                    [cands[0]], [0], tau, n_vis, SKIP_OCCLUDED)
    h = build_histogram(table, visible)
    acc = soft_intersect(h, tau)
    return InstanceDistribution(scene_id, im_id, inst.obj_id, inst.inst_id, inst.gt_pose,
                                [cands[int(i)] for i in acc], [int(i) for i in acc], tau, n_vis)


def tau_for_resolution(tau: int, resolution: float, reference: float = DEFAULT_RESOLUTION) -> float:
    """``tau`` rescaled so it keeps denoting the same surface area at another sampling."""
    return tau * (reference / resolution) ** 2


def check_tau_resolution(tau: int, resolution: float) -> Optional[str]:
    if abs(resolution - DEFAULT_RESOLUTION) > 1e-12 and tau == DEFAULT_TAU:
        msg = (f"tau={tau} points is calibrated for {DEFAULT_RESOLUTION} mm sampling; at "
               f"{resolution} mm the equivalent is about {tau_for_resolution(tau, resolution):.1f}")
        log.warning(msg)
        return msg
    return None
