"""Command line entry point: ``posedist <command> [options]``.

Exit codes: 0 success, 1 input or data error, 2 usage error. Logs and the
resolved configuration go to stderr; results are written to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bop_io, pipeline
from .annotate import DEFAULT_EPSILON, DEFAULT_RESOLUTION, DEFAULT_TAU
from .candidates import DEFAULT_STEPS
from .metrics import CLAMP_MODES, METRICS
from .visibility import DEFAULT_DEPTH_TOL, DEFAULT_VIS_FLOOR

log = logging.getLogger("posedist")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _id_list(s: str):
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")


def _metric_list(s: str):
    ms = [m.strip().lower() for m in s.split(",") if m.strip()]
    bad = [m for m in ms if m not in METRICS]
    if bad or not ms:
        raise argparse.ArgumentTypeError(f"metrics must be a subset of {','.join(METRICS)}")
    return tuple(ms)


def _positive_int(s: str):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _add_annotation_args(p, with_tau=True):
    p.add_argument("--dataset", required=True, type=Path, help="BOP dataset root")
    p.add_argument("--split", default="test")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="mm")
    p.add_argument("--resolution", type=float, default=DEFAULT_RESOLUTION, help="sampling, mm")
    p.add_argument("--steps", type=_positive_int, default=DEFAULT_STEPS,
                   help="discretization steps per full turn of a continuous symmetry")
    p.add_argument("--zeta", type=float, default=None, help="RGB tolerance; colour check off if unset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cand-mode", choices=("union", "product"), default="union")
    p.add_argument("--cache", type=Path, default=None, help="pattern table cache directory")
    p.add_argument("--jobs", type=_positive_int, default=1)
    if with_tau:
        p.add_argument("--tau", type=int, default=DEFAULT_TAU)
        p.add_argument("--depth-tol", type=float, default=DEFAULT_DEPTH_TOL, help="mm")
        p.add_argument("--vis-floor", type=float, default=DEFAULT_VIS_FLOOR)
        p.add_argument("--bop-masks", action="store_true",
                       help="intersect visibility with the dataset's mask_visib images")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="posedist", description="Per-image symmetry annotation and evaluation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute", help="compute and cache per-sample pattern tables")
    _add_annotation_args(p, with_tau=False)
    p.add_argument("--objects", type=_id_list, default=None, help="comma-separated object ids")

    p = sub.add_parser("annotate", help="write scene_gt_dist.json per scene")
    _add_annotation_args(p)
    p.add_argument("--out", required=True, type=Path)

    for name in ("eval-single", "eval-dist"):
        p = sub.add_parser(name)
        p.add_argument("--dataset", required=True, type=Path)
        p.add_argument("--split", default="test")
        p.add_argument("--annotations", required=True, type=Path)
        p.add_argument("--results", required=True, type=Path, help="results CSV")
        p.add_argument("--out", required=True, type=Path, help="report JSON path")
        if name == "eval-single":
            p.add_argument("--metrics", type=_metric_list, default=METRICS)
            p.add_argument("--gt-mode", choices=("per-image", "global"), default="per-image")
        else:
            p.add_argument("--clamp", choices=CLAMP_MODES, default="upper")
            p.add_argument("--max-modes", type=_positive_int, default=None)

    p = sub.add_parser("export-viz", help="per-instance pose CSVs")
    p.add_argument("--annotations", required=True, type=Path)
    p.add_argument("--results", type=Path, default=None)
    p.add_argument("--out", required=True, type=Path)
    return ap


def _config(args) -> pipeline.AnnotationConfig:
    if args.epsilon <= 0 or args.resolution <= 0:
        raise UsageError("--epsilon and --resolution must be positive")
    if getattr(args, "tau", 0) < 0:
        raise UsageError("--tau must be non-negative")
    return pipeline.AnnotationConfig(
        epsilon=args.epsilon, resolution=args.resolution, tau=getattr(args, "tau", DEFAULT_TAU),
        steps=args.steps, zeta=args.zeta, depth_tol=getattr(args, "depth_tol", DEFAULT_DEPTH_TOL),
        vis_floor=getattr(args, "vis_floor", DEFAULT_VIS_FLOOR), seed=args.seed,
        cand_mode=args.cand_mode, split=args.split, bop_masks=getattr(args, "bop_masks", False))


def _resolved(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def _print_config(cfg: dict) -> None:
    print("resolved configuration:", file=sys.stderr)
    print(json.dumps(cfg, indent=2, sort_keys=True), file=sys.stderr)


def format_table(summary: dict) -> str:
    width = max(len(k) for k in summary) if summary else 0
    lines = [f"{'metric':<{width}}  value"]
    for k, v in summary.items():
        lines.append(f"{k:<{width}}  {v:.4f}" if isinstance(v, float) else f"{k:<{width}}  {v}")
    return "\n".join(lines) + "\n"


def _write_report(path: Path, report, config: dict) -> None:
    d = report.to_dict()
    d["config"] = config
    bop_io.write_json(path, d)
    table = format_table(report.summary)
    path.with_suffix(".txt").write_text(table, encoding="utf-8")
    sys.stderr.write(table)


def run(args) -> int:
    resolved = _resolved(args)
    _print_config(resolved)
    if args.command == "precompute":
        cfg = _config(args)
        cache = args.cache or (args.dataset / "pattern_cache")
        done = pipeline.precompute_dataset(args.dataset, cfg, cache, args.objects, args.jobs)
        log.info("pattern tables ready for %d objects in %s", len(done), cache)
        return EXIT_OK
    if args.command == "annotate":
        cfg = _config(args)
        report = pipeline.annotate_dataset(args.dataset, cfg, args.out, args.cache, args.jobs)
        log.info("annotated %d instances, %d skipped, %d errors", report["n_annotated"],
                 report["n_skipped"], report["n_errors"])
        for e in report["errors"]:
            log.error(e)
        return EXIT_OK if report["n_errors"] == 0 else EXIT_DATA
    if args.command == "eval-single":
        report = pipeline.evaluate_single(args.dataset, args.annotations, args.results, args.metrics,
                                          args.split, args.gt_mode)
        _write_report(args.out, report, resolved)
        return EXIT_OK
    if args.command == "eval-dist":
        report = pipeline.evaluate_dist(args.dataset, args.annotations, args.results, args.split,
                                        args.clamp, args.max_modes)
        _write_report(args.out, report, resolved)
        return EXIT_OK
    if args.command == "export-viz":
        dists = bop_io.read_annotations(args.annotations)
        if not dists:
            raise bop_io.DatasetError([f"no annotations found under {args.annotations}"])
        ests = []
        if args.results is not None:
            ests = bop_io.read_dist_results_csv(args.results)
        paths = bop_io.export_viz(dists, ests, args.out)
        log.info("wrote %d files to %s", len(paths), args.out)
        return EXIT_OK
    raise UsageError(f"unknown command {args.command}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return run(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except bop_io.DatasetError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
