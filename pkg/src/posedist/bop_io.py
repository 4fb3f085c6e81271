"""Readers and writers for BOP dataset files, result CSVs, our per-image
distribution annotations, and plot-ready quaternion exports.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .annotate import InstanceDistribution
from .geom import CameraModel, RigidTransform, quat_from_matrix
from .metrics import DistributionEstimate, PoseEstimate

log = logging.getLogger(__name__)

DEFAULT_IMAGE_SIZE = (720, 540)
SCENE_DIST_FILE = "scene_gt_dist.json"
META_FILE = "annotation_meta.json"
RESULTS_HEADER = ["scene_id", "im_id", "obj_id", "score", "R", "t", "time"]


class DatasetError(Exception):
    """Dataset layout problems; ``problems`` lists every issue found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------------------
# JSON with exact floats
# ---------------------------------------------------------------------------

def fmt_float(x: float) -> str:
    """17 significant digits, always recognisable as a float."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("non-finite value in JSON output")
    s = "%.17g" % x
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj) -> str:
    """Compact deterministic JSON; floats via :func:`fmt_float`."""
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj, indent_top: bool = True) -> None:
    """One top-level key per line so large files stay diff-friendly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if indent_top and isinstance(obj, dict):
        body = ",\n".join(f"  {json.dumps(str(k))}: {dumps(v)}" for k, v in obj.items())
        text = "{\n" + body + "\n}\n" if obj else "{}\n"
    else:
        text = dumps(obj) + "\n"
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _load_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass
class SceneData:
    scene_id: int
    cameras: dict       # im_id -> CameraModel
    gt: dict            # im_id -> list of (obj_id, RigidTransform)
    path: Path = None


@dataclass
class DatasetIndex:
    root: Path
    split: str
    models_dir: Path
    models_info: dict                 # obj_id -> info dict
    scenes: dict = field(default_factory=dict)   # scene_id -> SceneData
    image_size: tuple = DEFAULT_IMAGE_SIZE
    eval_models_dir: Optional[Path] = None

    def model_path(self, obj_id: int, eval_model: bool = False) -> Path:
        base = self.eval_models_dir if (eval_model and self.eval_models_dir) else self.models_dir
        return base / f"obj_{int(obj_id):06d}.ply"

    def object_ids(self):
        return sorted(self.models_info)

    def instances(self):
        """(scene_id, im_id, inst_idx, obj_id, pose) over the whole split, sorted."""
        for sid in sorted(self.scenes):
            sc = self.scenes[sid]
            for im in sorted(sc.gt):
                for k, (oid, pose) in enumerate(sc.gt[im]):
                    yield sid, im, k, oid, pose


def read_models_info(path) -> dict:
    raw = _load_json(path)
    return {int(k): v for k, v in raw.items()}


def read_scene_camera(path, image_size=DEFAULT_IMAGE_SIZE) -> dict:
    raw = _load_json(path)
    out = {}
    for k, v in raw.items():
        w = int(v.get("width", image_size[0]))
        h = int(v.get("height", image_size[1]))
        out[int(k)] = CameraModel.from_K(v["cam_K"], w, h)
    return dict(sorted(out.items()))


def read_scene_gt(path) -> dict:
    raw = _load_json(path)
    out = {}
    for k, lst in raw.items():
        out[int(k)] = [(int(g["obj_id"]),
                        RigidTransform(np.asarray(g["cam_R_m2c"], dtype=np.float64).reshape(3, 3),
                                       np.asarray(g["cam_t_m2c"], dtype=np.float64).reshape(3)))
                       for g in lst]
    return dict(sorted(out.items()))


def read_test_targets(path) -> list:
    """BOP ``test_targets_bop19.json`` as sorted (scene_id, im_id, obj_id, inst_count)."""
    raw = _load_json(path)
    return sorted((int(r["scene_id"]), int(r["im_id"]), int(r["obj_id"]), int(r["inst_count"]))
                  for r in raw)


def load_dataset(root, split: str = "test", models_subdir: str = "models") -> DatasetIndex:
    root = Path(root)
    problems = []
    if not root.is_dir():
        raise DatasetError([f"dataset root {root} does not exist"])
    models_dir = root / models_subdir
    info_path = models_dir / "models_info.json"
    models_info = {}
    if not info_path.exists():
        problems.append(f"missing {info_path}")
    else:
        try:
            models_info = read_models_info(info_path)
        except (ValueError, OSError) as e:
            problems.append(f"corrupt {info_path}: {e}")

    image_size = DEFAULT_IMAGE_SIZE
    cam_json = root / "camera.json"
    if cam_json.exists():
        try:
            c = _load_json(cam_json)
            image_size = (int(c["width"]), int(c["height"]))
        except (ValueError, KeyError, OSError) as e:
            problems.append(f"corrupt {cam_json}: {e}")

    split_dir = root / split
    scenes = {}
    if not split_dir.is_dir():
        problems.append(f"missing split directory {split_dir}")
    else:
        for sdir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
            try:
                sid = int(sdir.name)
            except ValueError:
                continue
            cams, gts = {}, {}
            for name, reader, target in (("scene_camera.json", read_scene_camera, "cams"),
                                         ("scene_gt.json", read_scene_gt, "gts")):
                f = sdir / name
                if not f.exists():
                    problems.append(f"missing {f}")
                    continue
                try:
                    val = reader(f, image_size) if reader is read_scene_camera else reader(f)
                except (ValueError, KeyError, TypeError, OSError) as e:
                    problems.append(f"corrupt {f}: {e}")
                    continue
                if target == "cams":
                    cams = val
                else:
                    gts = val
            for im in gts:
                if im not in cams:
                    problems.append(f"scene {sid} image {im} has no camera entry")
            scenes[sid] = SceneData(sid, cams, gts, sdir)

    used = {oid for sc in scenes.values() for lst in sc.gt.values() for oid, _ in lst}
    for oid in sorted(used):
        if oid not in models_info and models_info:
            problems.append(f"object {oid} is not in models_info.json")
        if not (models_dir / f"obj_{oid:06d}.ply").exists():
            problems.append(f"missing model file for object {oid}")
    if problems:
        raise DatasetError(problems)
    eval_dir = root / "models_eval"
    return DatasetIndex(root, split, models_dir, models_info, scenes, image_size,
                        eval_dir if eval_dir.is_dir() else None)


# ---------------------------------------------------------------------------
# Results CSV
# ---------------------------------------------------------------------------

def _floats(s: str, n: int, what: str):
    vals = [float(x) for x in s.split()]
    if len(vals) != n:
        raise ValueError(f"{what} needs {n} values, got {len(vals)}")
    return np.asarray(vals)


def _nearest_rotation(R, tol: float = 1e-4):
    # submissions print rotations with few digits; snap small drift, keep det -1 an error
    err = np.abs(R @ R.T - np.eye(3)).max()
    if err < 1e-9 or err > tol or np.linalg.det(R) < 0:
        return R
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


def _parse_rows(path, errors):
    with open(path, "r", encoding="utf-8", newline="") as f:
        rd = csv.reader(f)
        try:
            header = [h.strip() for h in next(rd)]
        except StopIteration:
            return [], []
        missing = [h for h in RESULTS_HEADER if h not in header]
        if missing:
            raise ValueError(f"{path}: line 1: missing columns {missing}")
        col = {h: i for i, h in enumerate(header)}
        rows = []
        for line_no, rec in enumerate(rd, start=2):
            if not rec or all(not x.strip() for x in rec):
                continue
            try:
                if len(rec) != len(header):
                    raise ValueError(f"expected {len(header)} fields, got {len(rec)}")
                R = _floats(rec[col["R"]], 9, "R").reshape(3, 3)
                t = _floats(rec[col["t"]], 3, "t")
                pose = RigidTransform(_nearest_rotation(R), t)
                row = dict(scene_id=int(rec[col["scene_id"]]), im_id=int(rec[col["im_id"]]),
                           obj_id=int(rec[col["obj_id"]]), score=float(rec[col["score"]]),
                           time=float(rec[col["time"]]), pose=pose)
                if "mode_prob" in col:
                    s = rec[col["mode_prob"]].strip()
                    row["mode_prob"] = float(s) if s else None
                if "est_id" in col:
                    row["est_id"] = rec[col["est_id"]].strip()
                rows.append(row)
            except ValueError as e:
                msg = f"{path}: line {line_no}: {e}"
                if errors is None:
                    raise ValueError(msg) from None
                errors.append(msg)
        return header, rows


def read_results_csv(path, errors: Optional[list] = None) -> list:
    """Single-pose BOP results in file order.

    Bad rows raise ``ValueError`` naming the line, or are appended to
    ``errors`` (and skipped) when a list is passed.
    """
    _, rows = _parse_rows(path, errors)
    return [PoseEstimate(r["scene_id"], r["im_id"], r["obj_id"], r["pose"], r["score"], r["time"])
            for r in rows]


def read_dist_results_csv(path, errors: Optional[list] = None) -> list:
    """Distribution results: rows sharing (scene_id, im_id, obj_id) form one estimate.

    An optional ``est_id`` column splits several distributions of the same
    object in one image. Missing ``mode_prob`` means uniform.
    """
    header, rows = _parse_rows(path, errors)
    groups = OrderedDict()
    for r in rows:
        key = (r["scene_id"], r["im_id"], r["obj_id"], r.get("est_id"))
        groups.setdefault(key, []).append(r)
    out = []
    for (sid, im, oid, _), rs in groups.items():
        probs = [r.get("mode_prob") for r in rs]
        p = None if any(x is None for x in probs) else np.asarray(probs, dtype=np.float64)
        out.append(DistributionEstimate(sid, im, oid, [r["pose"] for r in rs], p,
                                        max(r["score"] for r in rs)))
    return out


def write_results_csv(path, estimates) -> None:
    """Shortest round-trip float text, so read(write(x)) == x exactly."""
    dist = estimates and isinstance(estimates[0], DistributionEstimate)
    header = RESULTS_HEADER + (["mode_prob", "est_id"] if dist else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)

    def pose_cells(T):
        return " ".join(repr(float(x)) for x in T.R.ravel()), " ".join(repr(float(x)) for x in T.t)

    for n, e in enumerate(estimates):
        if dist:
            probs = e.probs
            for k, T in enumerate(e.poses):
                R, t = pose_cells(T)
                w.writerow([e.scene_id, e.im_id, e.obj_id, repr(float(e.score)), R, t, "-1",
                            "" if probs is None else repr(float(probs[k])), n])
        else:
            R, t = pose_cells(e.pose)
            w.writerow([e.scene_id, e.im_id, e.obj_id, repr(float(e.score)), R, t, repr(float(e.time))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# Distribution annotations
# ---------------------------------------------------------------------------

def _record(d: InstanceDistribution) -> dict:
    rec = OrderedDict()
    rec["obj_id"] = int(d.obj_id)
    rec["inst_idx"] = int(d.inst_idx)
    rec["cam_R_m2c"] = [float(x) for x in d.gt_pose.R.ravel()]
    rec["cam_t_m2c"] = [float(x) for x in d.gt_pose.t]
    rec["sym_Rs"] = [[float(x) for x in S.R.ravel()] for S in d.syms]
    rec["sym_ts"] = [[float(x) for x in S.t] for S in d.syms]
    if d.accepted is not None:
        rec["sym_ids"] = [int(i) for i in d.accepted]
    rec["tau"] = int(d.tau)
    rec["n_visible"] = int(d.n_visible)
    rec["skipped"] = d.skipped
    return rec


def scene_annotation_dict(dists) -> dict:
    by_im = defaultdict(list)
    for d in sorted(dists, key=lambda d: (d.im_id, d.inst_idx)):
        by_im[d.im_id].append(_record(d))
    return OrderedDict((str(im), by_im[im]) for im in sorted(by_im))


def write_scene_annotations(path, dists) -> None:
    write_json(path, scene_annotation_dict(dists))


def read_scene_annotations(path, scene_id: int) -> list:
    raw = _load_json(path)
    out = []
    for im, recs in raw.items():
        for r in recs:
            gt = RigidTransform(np.asarray(r["cam_R_m2c"], dtype=np.float64).reshape(3, 3),
                                np.asarray(r["cam_t_m2c"], dtype=np.float64))
            syms = [RigidTransform(np.asarray(R, dtype=np.float64).reshape(3, 3),
                                   np.asarray(t, dtype=np.float64))
                    for R, t in zip(r["sym_Rs"], r["sym_ts"])]
            out.append(InstanceDistribution(scene_id, int(im), int(r["obj_id"]), int(r["inst_idx"]),
                                            gt, syms, r.get("sym_ids"), int(r["tau"]),
                                            int(r["n_visible"]), r.get("skipped")))
    return out


def write_annotations(out_dir, dists) -> list:
    """One ``<scene:06d>/scene_gt_dist.json`` per scene; returns written paths."""
    out_dir = Path(out_dir)
    by_scene = defaultdict(list)
    for d in dists:
        by_scene[d.scene_id].append(d)
    paths = []
    for sid in sorted(by_scene):
        p = out_dir / f"{sid:06d}" / SCENE_DIST_FILE
        write_scene_annotations(p, by_scene[sid])
        paths.append(p)
    return paths


def read_annotations(path) -> list:
    """All distributions under ``path`` (a scene file or a directory of scenes)."""
    path = Path(path)
    if path.is_file():
        return read_scene_annotations(path, int(path.parent.name))
    out = []
    for f in sorted(path.glob(f"*/{SCENE_DIST_FILE}")):
        out.extend(read_scene_annotations(f, int(f.parent.name)))
    return out


# ---------------------------------------------------------------------------
# Visualisation export
# ---------------------------------------------------------------------------

VIZ_HEADER = ["source", "mode", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "prob"]


def viz_rows(dist: InstanceDistribution, estimates=()) -> list:
    rows = []
    n = len(dist.poses)
    for k, P in enumerate(dist.poses):
        rows.append(["gt-dist", k, *quat_from_matrix(P.R), *P.t, 1.0 / n])
    for e in estimates:
        if isinstance(e, DistributionEstimate):
            probs = e.normalized_probs()
            for k, P in enumerate(e.poses):
                rows.append(["estimate", k, *quat_from_matrix(P.R), *P.t, probs[k]])
        else:
            rows.append(["estimate", 0, *quat_from_matrix(e.pose.R), *e.pose.t, 1.0])
    return rows


def export_viz(dists, estimates, out_dir) -> list:
    """One CSV per instance with unit quaternions (w, x, y, z) and translations."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_key = defaultdict(list)
    for e in estimates or ():
        by_key[(e.scene_id, e.im_id, e.obj_id)].append(e)
    paths = []
    for d in sorted(dists, key=lambda d: d.key):
        p = out_dir / (f"scene{d.scene_id:06d}_im{d.im_id:06d}_obj{d.obj_id:06d}"
                       f"_inst{d.inst_idx:03d}.csv")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(VIZ_HEADER)
        for r in viz_rows(d, by_key.get((d.scene_id, d.im_id, d.obj_id), ())):
            w.writerow([r[0], r[1]] + [repr(float(x)) for x in r[2:]])
        p.write_text(buf.getvalue(), encoding="utf-8")
        paths.append(p)
    return paths
