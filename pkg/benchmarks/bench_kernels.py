"""Time each hot kernel in its numba and numpy flavour.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Numba functions are warmed up once before timing so compilation is excluded.
Every pair is also checked for agreement before it is timed.
"""

import argparse
import time

import numpy as np

from posedist import kernels, shapes
from posedist.geom import RigidTransform
from posedist.mesh import candidate_cloud


def _time(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _raster_case(rng):
    mesh = shapes.uv_sphere(50.0, 48, 96)
    pose = RigidTransform(np.eye(3), [0.0, 0.0, 400.0])
    v = pose.apply(mesh.vertices)
    f, cx, cy = 600.0, 320.0, 240.0
    uvz = np.stack([f * v[:, 0] / v[:, 2] + cx, f * v[:, 1] / v[:, 2] + cy, v[:, 2]], 1)
    tris = np.ascontiguousarray(uvz[mesh.faces])

    def run(fn):
        depth = np.zeros((480, 640))
        fn(tris, depth)
        return depth
    return ("rasterize_depth", lambda: run(kernels.rasterize_depth_numba),
            lambda: run(kernels.rasterize_depth_numpy), np.array_equal)


def _counts_case(rng):
    packed = rng.integers(0, 256, size=(20000, 45), dtype=np.uint8)
    rows = np.sort(rng.choice(20000, 12000, replace=False))
    return ("column_counts", lambda: kernels.column_counts_numba(packed, rows, 360),
            lambda: kernels.column_counts_numpy(packed, rows, 360), np.array_equal)


def _poisson_case(rng):
    nodes, _, _ = candidate_cloud(shapes.chamfered_cube(40.0, 6.0), 0.125)
    order = rng.permutation(len(nodes))
    return ("poisson_select", lambda: kernels.poisson_select(nodes, order, 0.25, use_numba=True),
            lambda: kernels.poisson_select(nodes, order, 0.25, use_numba=False), np.array_equal)


def _stack(rng, n):
    R = np.stack([RigidTransform.from_axis_angle(rng.normal(size=3), rng.uniform(0, np.pi)).R for _ in range(n)])
    return R, rng.normal(scale=10, size=(n, 3)) + [0, 0, 600]


def _dist_case(rng):
    RA, tA = _stack(rng, 40)
    RB, tB = _stack(rng, 40)
    pts = rng.normal(scale=20, size=(1000, 3))
    return ("pairwise_max_dist", lambda: kernels.pairwise_max_dist_numba(RA, tA, RB, tB, pts),
            lambda: kernels.pairwise_max_dist_numpy(RA, tA, RB, tB, pts),
            lambda a, b: np.allclose(a, b, rtol=1e-10, atol=1e-9))


def _proj_case(rng):
    RA, tA = _stack(rng, 40)
    RB, tB = _stack(rng, 40)
    pts = rng.normal(scale=20, size=(1000, 3))
    cam = (1075.0, 1073.0, 360.0, 270.0)
    return ("pairwise_max_proj", lambda: kernels.pairwise_max_proj_numba(RA, tA, RB, tB, pts, *cam),
            lambda: kernels.pairwise_max_proj_numpy(RA, tA, RB, tB, pts, *cam),
            lambda a, b: np.allclose(a, b, rtol=1e-10, atol=1e-9))


CASES = [_raster_case, _counts_case, _poisson_case, _dist_case, _proj_case]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for make in CASES:
        name, nb, npy, same = make(rng)
        if not same(nb(), npy()):
            raise SystemExit(f"{name}: numba and numpy flavours disagree")
        t_nb = _time(nb, (), args.repeat)
        t_np = _time(npy, (), args.repeat)
        print(f"{name:<20}{1e3 * t_nb:>12.2f}{1e3 * t_np:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
