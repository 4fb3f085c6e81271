"""Pose errors (MSD/MPD and their pattern-aware MSSD/MSPD), recall scoring and
precision/recall of predicted pose distributions against per-image ground truth.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .geom import CameraModel, PointSet, RigidTransform, stack

log = logging.getLogger(__name__)

METRICS = ("mssd", "mspd")
DIST_METRICS = ("mpd", "msd")
THRESHOLD_FRACTIONS = np.arange(0.05, 0.51, 0.05)
MSPD_PX = np.arange(5, 51, 5).astype(np.float64)
CLAMP_MODES = ("upper", "literal")


@dataclass(eq=False)
class PoseEstimate:
    scene_id: int
    im_id: int
    obj_id: int
    pose: RigidTransform
    score: float = 1.0
    time: float = -1.0

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("estimate score must be finite")


@dataclass(eq=False)
class DistributionEstimate:
    scene_id: int
    im_id: int
    obj_id: int
    poses: list
    probs: Optional[np.ndarray] = None
    score: float = 1.0

    def __post_init__(self):
        if self.probs is not None:
            p = np.asarray(self.probs, dtype=np.float64)
            if len(p) != len(self.poses):
                raise ValueError("one probability per mode required")
            if np.any(p < 0) or not np.all(np.isfinite(p)):
                raise ValueError("mode probabilities must be finite and non-negative")
            self.probs = p

    def weights(self) -> np.ndarray:
        """Unnormalised mode weights; ones when no probabilities were given."""
        n = len(self.poses)
        if self.probs is None or self.probs.sum() <= 0:
            return np.ones(n)
        return self.probs

    def normalized_probs(self) -> np.ndarray:
        """Mode probabilities summing to one; uniform when none were given."""
        n = len(self.poses)
        if n == 0:
            return np.zeros(0)
        if self.probs is None or self.probs.sum() <= 0:
            return np.full(n, 1.0 / n)
        return self.probs / math.fsum(self.probs)

    def truncated(self, k: int) -> "DistributionEstimate":
        """Keep the ``k`` most probable modes (stable on ties)."""
        if k is None or len(self.poses) <= k:
            return self
        if self.probs is None:
            keep = np.arange(k)
        else:
            keep = np.sort(np.argsort(-self.probs, kind="stable")[:k])
        probs = None if self.probs is None else self.probs[keep]
        return DistributionEstimate(self.scene_id, self.im_id, self.obj_id,
                                    [self.poses[i] for i in keep], probs, self.score)

    @property
    def key(self):
        return (self.scene_id, self.im_id, self.obj_id)


def _pts(pts) -> np.ndarray:
    a = pts.positions if isinstance(pts, PointSet) else np.asarray(pts, dtype=np.float64)
    a = a.reshape(-1, 3)
    if len(a) == 0:
        raise ValueError("empty point set")
    return a


def _check_depth(R, t, pts):
    z = np.einsum("kj,nj->kn", R[:, 2, :], pts) + t[:, 2:3]
    if np.any(z <= 0):
        raise ValueError("model point behind the camera")


# ---------------------------------------------------------------------------
# Pose errors
# ---------------------------------------------------------------------------

def msd_matrix(A: Sequence[RigidTransform], B: Sequence[RigidTransform], pts) -> np.ndarray:
    """(len(A), len(B)) maximum surface distances."""
    RA, tA = stack(A)
    RB, tB = stack(B)
    if len(A) == 0 or len(B) == 0:
        return np.zeros((len(A), len(B)))
    return kernels.pairwise_max_dist(RA, tA, RB, tB, _pts(pts))


def mpd_matrix(A, B, pts, cam: CameraModel) -> np.ndarray:
    """(len(A), len(B)) maximum projected distances in pixels."""
    RA, tA = stack(A)
    RB, tB = stack(B)
    if len(A) == 0 or len(B) == 0:
        return np.zeros((len(A), len(B)))
    P = _pts(pts)
    _check_depth(RA, tA, P)
    _check_depth(RB, tB, P)
    return kernels.pairwise_max_proj(RA, tA, RB, tB, P, cam.fx, cam.fy, cam.cx, cam.cy)


def msd(est: RigidTransform, gt: RigidTransform, pts) -> float:
    return float(msd_matrix([est], [gt], pts)[0, 0])


def mpd(est: RigidTransform, gt: RigidTransform, pts, cam: CameraModel) -> float:
    return float(mpd_matrix([est], [gt], pts, cam)[0, 0])


def _pattern_poses(gt, pattern):
    if len(pattern) == 0:
        raise ValueError("symmetry pattern must contain at least the identity")
    return [RigidTransform(gt.R @ S.R, gt.R @ S.t + gt.t) for S in pattern]


def mssd(est, gt, pattern, pts) -> float:
    """min over S in ``pattern`` of msd(est, gt ∘ S)."""
    return float(msd_matrix([est], _pattern_poses(gt, pattern), pts).min())


def mspd(est, gt, pattern, pts, cam: CameraModel) -> float:
    return float(mpd_matrix([est], _pattern_poses(gt, pattern), pts, cam).min())


# ---------------------------------------------------------------------------
# Evaluation context
# ---------------------------------------------------------------------------

def mssd_thresholds(diameter: float) -> np.ndarray:
    return THRESHOLD_FRACTIONS * diameter


def mspd_thresholds(image_width: int) -> np.ndarray:
    return MSPD_PX * (image_width / 640.0)


@dataclass
class EvalContext:
    """Per-object model points and diameters plus per-image cameras."""

    points: Mapping[int, np.ndarray]
    diameters: Mapping[int, float]
    cameras: Mapping[tuple, CameraModel]
    # optional overrides: metric -> callable(obj_id, camera) -> thresholds
    thresholds: dict = field(default_factory=dict)

    def camera(self, scene_id, im_id) -> CameraModel:
        return self.cameras[(scene_id, im_id)]

    def thresholds_for(self, metric: str, obj_id: int, cam: CameraModel) -> np.ndarray:
        if metric in self.thresholds:
            return np.asarray(self.thresholds[metric](obj_id, cam), dtype=np.float64)
        if metric in ("mssd", "msd"):
            return mssd_thresholds(self.diameters[obj_id])
        if metric in ("mspd", "mpd"):
            return mspd_thresholds(cam.width)
        raise ValueError(f"unknown metric {metric!r}")

    def error_matrix(self, metric, est_poses, gt_poses, obj_id, scene_id, im_id) -> np.ndarray:
        pts = self.points[obj_id]
        if metric in ("mssd", "msd"):
            return msd_matrix(est_poses, gt_poses, pts)
        if metric in ("mspd", "mpd"):
            cam = self.camera(scene_id, im_id)
            try:
                return mpd_matrix(est_poses, gt_poses, pts, cam)
            except ValueError:
                # fall back pose by pose so a single bad estimate only fails itself
                out = np.full((len(est_poses), len(gt_poses)), np.inf)
                for a, e in enumerate(est_poses):
                    for b, g in enumerate(gt_poses):
                        try:
                            out[a, b] = mpd(e, g, pts, cam)
                        except ValueError:
                            pass
                return out
        raise ValueError(f"unknown metric {metric!r}")


# ---------------------------------------------------------------------------
# Single-pose recall
# ---------------------------------------------------------------------------

def _est_order_key(e: PoseEstimate):
    # total order independent of file row order
    return (-e.score, tuple(e.pose.R.ravel()), tuple(e.pose.t))


def _group_targets(annotations):
    groups = defaultdict(list)
    for a in annotations:
        if a.skipped:
            continue
        groups[(a.scene_id, a.im_id, a.obj_id)].append(a)
    for g in groups.values():
        g.sort(key=lambda a: a.inst_idx)
    return dict(sorted(groups.items()))


def greedy_match(errors: np.ndarray, threshold: float) -> np.ndarray:
    """Rows are estimates in decreasing score; each takes the free GT column of
    lowest error below ``threshold``. Returns a boolean per GT column."""
    n_est, n_gt = errors.shape
    matched = np.zeros(n_gt, dtype=bool)
    for a in range(n_est):
        best, best_e = -1, threshold
        for b in range(n_gt):
            if not matched[b] and errors[a, b] < best_e:
                best, best_e = b, errors[a, b]
        if best >= 0:
            matched[best] = True
    return matched


@dataclass
class ScoreReport:
    """Recall/precision values in [0, 1] keyed by metric; see ``summary``."""

    per_metric: dict
    summary: dict
    unmatched: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"summary": self.summary, "per_metric": self.per_metric, "unmatched": self.unmatched}


def single_pose_errors(estimates, annotations, metric: str, ctx: EvalContext):
    """Per target group: (targets, error matrix with rows in score order)."""
    ests = defaultdict(list)
    for e in estimates:
        ests[(e.scene_id, e.im_id, e.obj_id)].append(e)
    out = {}
    for key, targets in _group_targets(annotations).items():
        scene_id, im_id, obj_id = key
        cand = sorted(ests.get(key, []), key=_est_order_key)[:len(targets)]
        E = np.full((len(cand), len(targets)), np.inf)
        for b, gt in enumerate(targets):
            pattern_poses = gt.poses
            if not cand:
                break
            M = ctx.error_matrix(metric, [e.pose for e in cand], pattern_poses, obj_id, scene_id, im_id)
            E[:, b] = M.min(axis=1)
        out[key] = (targets, E)
    return out


def single_pose_recall(estimates, annotations, metric: str, ctx: EvalContext,
                       errors=None) -> dict:
    """Recall per object and pooled, averaged over the metric's threshold grid.

    A target is correct at threshold θ when a matched estimate has error < θ.
    Missing estimates count as incorrect.
    """
    if errors is None:
        errors = single_pose_errors(estimates, annotations, metric, ctx)
    per_obj_hits = defaultdict(list)   # obj -> list of per-target mean-over-θ hit rate
    pooled = []
    n_thr = None
    for (scene_id, im_id, obj_id), (targets, E) in errors.items():
        cam = ctx.cameras.get((scene_id, im_id))
        thr = ctx.thresholds_for(metric, obj_id, cam)
        n_thr = len(thr)
        hits = np.zeros((len(thr), len(targets)))
        for k, th in enumerate(thr):
            hits[k] = greedy_match(E, th)
        per_target = hits.mean(axis=0)
        per_obj_hits[obj_id].extend(per_target.tolist())
        pooled.extend(per_target.tolist())
    per_object = {int(o): float(np.mean(v)) for o, v in sorted(per_obj_hits.items())}
    return {
        "per_object": per_object,
        "recall_objects": float(np.mean(list(per_object.values()))) if per_object else 0.0,
        "recall_pooled": float(np.mean(pooled)) if pooled else 0.0,
        "n_targets": len(pooled),
        "n_thresholds": n_thr,
    }


def single_pose_report(estimates, annotations, ctx: EvalContext, metrics=METRICS) -> ScoreReport:
    per = {m: single_pose_recall(estimates, annotations, m, ctx) for m in metrics}
    summary = {f"AR_{m}": per[m]["recall_objects"] for m in metrics}
    summary.update({f"AR_{m}_pooled": per[m]["recall_pooled"] for m in metrics})
    summary["score"] = float(np.mean([per[m]["recall_objects"] for m in metrics]))
    return ScoreReport(per, summary)


# ---------------------------------------------------------------------------
# Distribution precision / recall
# ---------------------------------------------------------------------------

def _mean(v) -> float:
    return math.fsum(v) / len(v)


def precision_from_matrix(D: np.ndarray, weights: np.ndarray, tau_d: float) -> float:
    """D: (n_est, n_gt) distances; ``weights`` are mode probabilities up to scale.

    Sums are taken over unnormalised weights and divided once, so uniform
    weights give exact hit fractions.
    """
    if D.shape[0] == 0 or D.shape[1] == 0:
        return 0.0
    w = np.asarray(weights, dtype=np.float64)
    total = math.fsum(w)
    if total <= 0:
        return 0.0
    return math.fsum(w * (D.min(axis=1) < tau_d)) / total


def recall_from_matrix(D: np.ndarray, weights: np.ndarray, tau_d: float, clamp_mode: str = "upper") -> float:
    if clamp_mode not in CLAMP_MODES:
        raise ValueError(f"clamp_mode must be one of {CLAMP_MODES}")
    n_est, n_gt = D.shape
    if n_est == 0 or n_gt == 0:
        return 0.0
    w = np.asarray(weights, dtype=np.float64)
    total = math.fsum(w)
    if total <= 0:
        return 0.0
    nearest = D.argmin(axis=0)
    d = D[nearest, np.arange(n_gt)]
    # clamp(p, 1/|GT|) scaled by total * |GT|
    scaled = w[nearest] * n_gt
    c = np.minimum(scaled, total) if clamp_mode == "upper" else np.maximum(scaled, total)
    return math.fsum(c * (d < tau_d)) / (total * n_gt)


def _dist_matrix(metric, est_poses, gt_poses, pts, cam):
    if metric == "msd":
        return msd_matrix(est_poses, gt_poses, pts)
    if metric == "mpd":
        return mpd_matrix(est_poses, gt_poses, pts, cam)
    raise ValueError(f"unknown distribution metric {metric!r}")


def dist_precision(est: DistributionEstimate, gt, metric: str, tau_d: float, pts,
                   cam: Optional[CameraModel] = None) -> float:
    """Probability mass of estimated modes lying within ``tau_d`` of some GT pose."""
    D = _dist_matrix(metric, est.poses, gt.poses, pts, cam)
    return precision_from_matrix(D, est.weights(), tau_d)


def dist_recall(est: DistributionEstimate, gt, metric: str, tau_d: float, pts,
                cam: Optional[CameraModel] = None, clamp_mode: str = "upper") -> float:
    """Sum over GT poses of the clamped probability of the nearest estimated mode,
    counted when that mode lies within ``tau_d``."""
    D = _dist_matrix(metric, est.poses, gt.poses, pts, cam)
    return recall_from_matrix(D, est.weights(), tau_d, clamp_mode)


def _dist_order_key(e: DistributionEstimate):
    first = e.poses[0] if e.poses else None
    return (-e.score, () if first is None else tuple(first.R.ravel()) + tuple(first.t))


def dist_score_report(estimates: Sequence[DistributionEstimate], annotations, ctx: EvalContext,
                      clamp_mode: str = "upper", max_modes: Optional[int] = None) -> ScoreReport:
    """P and R for MPD and MSD, averaged over the threshold grid and over targets (x100)."""
    groups = defaultdict(list)
    for e in estimates:
        groups[e.key].append(e.truncated(max_modes) if max_modes else e)
    targets = _group_targets(annotations)
    sums = {f"{q}_{m}": [] for m in DIST_METRICS for q in ("P", "R")}
    unmatched = []
    for key, gts in targets.items():
        scene_id, im_id, obj_id = key
        cam = ctx.cameras.get((scene_id, im_id))
        ests = sorted(groups.pop(key, []), key=_dist_order_key)
        pts = ctx.points[obj_id]
        # greedy instance assignment by score, using the best-mode MSD
        assign = {}
        free = list(range(len(gts)))
        for e in ests:
            if not free or not e.poses:
                unmatched.append(list(key))
                continue
            top = int(np.argmax(e.normalized_probs()))
            costs = [msd_matrix([e.poses[top]], gts[b].poses, pts).min() for b in free]
            b = free.pop(int(np.argmin(costs)))
            assign[b] = e
        for b, gt in enumerate(gts):
            e = assign.get(b)
            for m in DIST_METRICS:
                thr = ctx.thresholds_for(m, obj_id, cam)
                if e is None:
                    sums[f"P_{m}"].append(0.0)
                    sums[f"R_{m}"].append(0.0)
                    continue
                try:
                    D = _dist_matrix(m, e.poses, gt.poses, pts, cam)
                except ValueError:
                    D = ctx.error_matrix(m, e.poses, gt.poses, obj_id, scene_id, im_id)
                p = e.weights()
                sums[f"P_{m}"].append(_mean([precision_from_matrix(D, p, t) for t in thr]))
                sums[f"R_{m}"].append(_mean([recall_from_matrix(D, p, t, clamp_mode) for t in thr]))
    for key in sorted(groups):
        unmatched.append(list(key))
    summary = {k: 100.0 * _mean(v) if v else 0.0 for k, v in sums.items()}
    summary = {k: summary[k] for k in ("P_mpd", "R_mpd", "P_msd", "R_msd")}
    per = {"n_targets": len(next(iter(sums.values()))), "clamp_mode": clamp_mode}
    return ScoreReport(per, summary, sorted(unmatched))
