"""Hot inner loops, each in a numba flavour and a pure numpy flavour.

The rasterizer and the dart-throwing selection give bit-identical output in
both flavours; the pose-distance kernels agree to float rounding. The
benchmark in ``benchmarks/`` times them against each other. Module-level
names without suffix dispatch on ``_accel.USE_NUMBA``.
"""

import numpy as np

from . import _accel
from ._accel import njit


# ---------------------------------------------------------------------------
# Z-buffer rasterization
# ---------------------------------------------------------------------------

def _raster_py(tris, depth):
    """Reference loop body shared by the numba kernel.

    :param tris: (T, 3, 3) float64, per vertex (u, v, z) with z > 0.
    :param depth: (H, W) float64 z-buffer, 0 marks empty; updated in place.
    """
    H, W = depth.shape
    for k in range(tris.shape[0]):
        u0, v0, z0 = tris[k, 0, 0], tris[k, 0, 1], tris[k, 0, 2]
        u1, v1, z1 = tris[k, 1, 0], tris[k, 1, 1], tris[k, 1, 2]
        u2, v2, z2 = tris[k, 2, 0], tris[k, 2, 1], tris[k, 2, 2]
        area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
        if abs(area) < 1e-12:
            continue
        umin = min(u0, min(u1, u2))
        umax = max(u0, max(u1, u2))
        vmin = min(v0, min(v1, v2))
        vmax = max(v0, max(v1, v2))
        x0 = max(0, int(np.ceil(umin - 0.5)))
        x1 = min(W - 1, int(np.floor(umax - 0.5)))
        y0 = max(0, int(np.ceil(vmin - 0.5)))
        y1 = min(H - 1, int(np.floor(vmax - 0.5)))
        iz0 = 1.0 / z0
        iz1 = 1.0 / z1
        iz2 = 1.0 / z2
        for y in range(y0, y1 + 1):
            py = y + 0.5
            for x in range(x0, x1 + 1):
                px = x + 0.5
                w0 = (u2 - u1) * (py - v1) - (v2 - v1) * (px - u1)
                w1 = (u0 - u2) * (py - v2) - (v0 - v2) * (px - u2)
                w2 = (u1 - u0) * (py - v0) - (v1 - v0) * (px - u0)
                if area > 0.0:
                    if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                        continue
                else:
                    if w0 > 0.0 or w1 > 0.0 or w2 > 0.0:
                        continue
                b0 = w0 / area
                b1 = w1 / area
                b2 = w2 / area
                z = 1.0 / (b0 * iz0 + b1 * iz1 + b2 * iz2)
                d = depth[y, x]
                if d == 0.0 or z < d:
                    depth[y, x] = z


rasterize_depth_numba = njit(_raster_py)


def rasterize_depth_numpy(tris, depth):
    H, W = depth.shape
    for k in range(tris.shape[0]):
        (u0, v0, z0), (u1, v1, z1), (u2, v2, z2) = tris[k]
        area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
        if abs(area) < 1e-12:
            continue
        x0 = max(0, int(np.ceil(min(u0, u1, u2) - 0.5)))
        x1 = min(W - 1, int(np.floor(max(u0, u1, u2) - 0.5)))
        y0 = max(0, int(np.ceil(min(v0, v1, v2) - 0.5)))
        y1 = min(H - 1, int(np.floor(max(v0, v1, v2) - 0.5)))
        if x1 < x0 or y1 < y0:
            continue
        px = np.arange(x0, x1 + 1) + 0.5
        py = (np.arange(y0, y1 + 1) + 0.5)[:, None]
        w0 = (u2 - u1) * (py - v1) - (v2 - v1) * (px - u1)
        w1 = (u0 - u2) * (py - v2) - (v0 - v2) * (px - u2)
        w2 = (u1 - u0) * (py - v0) - (v1 - v0) * (px - u0)
        if area > 0.0:
            inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        else:
            inside = (w0 <= 0.0) & (w1 <= 0.0) & (w2 <= 0.0)
        if not inside.any():
            continue
        z = 1.0 / ((w0 / area) * (1.0 / z0) + (w1 / area) * (1.0 / z1)
                   + (w2 / area) * (1.0 / z2))
        sub = depth[y0:y1 + 1, x0:x1 + 1]
        upd = inside & ((sub == 0.0) | (z < sub))
        sub[upd] = z[upd]


# ---------------------------------------------------------------------------
# Histogram over packed bitset rows
# ---------------------------------------------------------------------------

@njit
def column_counts_numba(packed, rows, n_cols):
    # tally byte values per column first, then expand the 256 bins to bits
    n_bytes = packed.shape[1]
    tally = np.zeros((n_bytes, 256), dtype=np.int64)
    for r in range(rows.shape[0]):
        row = rows[r]
        for b in range(n_bytes):
            tally[b, packed[row, b]] += 1
    counts = np.zeros(n_cols, dtype=np.int64)
    for b in range(n_bytes):
        for v in range(1, 256):
            c = tally[b, v]
            if c == 0:
                continue
            for bit in range(8):
                col = b * 8 + bit
                if (v >> bit) & 1 and col < n_cols:
                    counts[col] += c
    return counts


def column_counts_numpy(packed, rows, n_cols):
    if len(rows) == 0:
        return np.zeros(n_cols, dtype=np.int64)
    bits = np.unpackbits(packed[rows], axis=1, count=n_cols, bitorder="little")
    return bits.sum(axis=0, dtype=np.int64)


# ---------------------------------------------------------------------------
# Greedy dart throwing on a candidate cloud (Poisson-disk style)
# ---------------------------------------------------------------------------

@njit
def _poisson_select_numba(nbr, cell_of, pts, order, r2, cap):
    n_cells = nbr.shape[0]
    slots = np.full((n_cells, cap), -1, dtype=np.int64)
    fill = np.zeros(n_cells, dtype=np.int64)
    accepted = np.zeros(pts.shape[0], dtype=np.bool_)
    for k in range(order.shape[0]):
        i = order[k]
        ci = cell_of[i]
        ok = True
        for m in range(nbr.shape[1]):
            c = nbr[ci, m]
            if c < 0:
                continue
            for s in range(fill[c]):
                j = slots[c, s]
                ex = pts[i, 0] - pts[j, 0]
                ey = pts[i, 1] - pts[j, 1]
                ez = pts[i, 2] - pts[j, 2]
                if ex * ex + ey * ey + ez * ez < r2:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            accepted[i] = True
            slots[ci, fill[ci]] = i
            fill[ci] += 1
    return accepted


def _poisson_select_python(nbr, cell_of, pts, order, r2, cap):
    grid = {}
    accepted = np.zeros(pts.shape[0], dtype=bool)
    P = pts.tolist()
    cell_of = cell_of.tolist()
    nbr = [[c for c in row if c >= 0] for row in nbr.tolist()]
    for i in order.tolist():
        px, py, pz = P[i]
        ok = True
        for c in nbr[cell_of[i]]:
            for j in grid.get(c, ()):
                qx, qy, qz = P[j]
                ex = px - qx
                ey = py - qy
                ez = pz - qz
                if ex * ex + ey * ey + ez * ez < r2:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            accepted[i] = True
            grid.setdefault(cell_of[i], []).append(i)
    return accepted


def _cell_neighbours(pts, size):
    """Occupied grid cells of edge ``size``: cell index per point and the
    (n_cells, 27) table of occupied neighbour cells (-1 where empty)."""
    ijk = np.floor((pts - pts.min(axis=0)) / size).astype(np.int64) + 1
    dims = ijk.max(axis=0) + 2
    key = (ijk[:, 0] * dims[1] + ijk[:, 1]) * dims[2] + ijk[:, 2]
    cells, cell_of = np.unique(key, return_inverse=True)
    d = np.array([-1, 0, 1])
    offs = ((d[:, None, None] * dims[1] + d[None, :, None]) * dims[2] + d[None, None, :]).ravel()
    want = cells[:, None] + offs[None, :]
    pos = np.searchsorted(cells, want)
    pos_c = np.minimum(pos, len(cells) - 1)
    nbr = np.where(cells[pos_c] == want, pos_c, -1)
    return nbr.astype(np.int64), cell_of.reshape(-1).astype(np.int64)


def poisson_select(pts, order, radius, use_numba=None):
    """Greedy minimum-distance selection over ``pts`` visited in ``order``.

    A point is kept iff it is at least ``radius`` away from every point kept
    before it. Returns a boolean mask.
    """
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if len(pts) == 0:
        return np.zeros(0, dtype=bool)
    nbr, cell_of = _cell_neighbours(pts, radius)
    # points in a radius-sized cube at mutual distance >= radius
    cap = 16
    fn = _poisson_select_numba if use_numba else _poisson_select_python
    return fn(nbr, cell_of, pts,
              np.ascontiguousarray(order, dtype=np.int64), float(radius) ** 2, cap)


# ---------------------------------------------------------------------------
# Pairwise max point displacement between two pose stacks
# ---------------------------------------------------------------------------

@njit
def pairwise_max_dist_numba(RA, tA, RB, tB, pts):
    nA = RA.shape[0]
    nB = RB.shape[0]
    n = pts.shape[0]
    out = np.zeros((nA, nB))
    PA = np.empty((n, 3))
    for a in range(nA):
        for j in range(n):
            for r in range(3):
                PA[j, r] = (RA[a, r, 0] * pts[j, 0] + RA[a, r, 1] * pts[j, 1]
                            + RA[a, r, 2] * pts[j, 2] + tA[a, r])
        for b in range(nB):
            best = 0.0
            for j in range(n):
                s = 0.0
                for r in range(3):
                    q = (RB[b, r, 0] * pts[j, 0] + RB[b, r, 1] * pts[j, 1]
                         + RB[b, r, 2] * pts[j, 2] + tB[b, r])
                    e = PA[j, r] - q
                    s += e * e
                if s > best:
                    best = s
            out[a, b] = np.sqrt(best)
    return out


def pairwise_max_dist_numpy(RA, tA, RB, tB, pts):
    PA = np.einsum("aij,nj->ani", RA, pts) + tA[:, None, :]
    PB = np.einsum("bij,nj->bni", RB, pts) + tB[:, None, :]
    out = np.empty((len(RA), len(RB)))
    for a in range(len(RA)):
        d2 = ((PA[a][None] - PB) ** 2).sum(axis=2)
        out[a] = np.sqrt(d2.max(axis=1))
    return out


@njit
def pairwise_max_proj_numba(RA, tA, RB, tB, pts, fx, fy, cx, cy):
    nA = RA.shape[0]
    nB = RB.shape[0]
    n = pts.shape[0]
    out = np.zeros((nA, nB))
    UA = np.empty((n, 2))
    for a in range(nA):
        for j in range(n):
            x = RA[a, 0, 0] * pts[j, 0] + RA[a, 0, 1] * pts[j, 1] + RA[a, 0, 2] * pts[j, 2] + tA[a, 0]
            y = RA[a, 1, 0] * pts[j, 0] + RA[a, 1, 1] * pts[j, 1] + RA[a, 1, 2] * pts[j, 2] + tA[a, 1]
            z = RA[a, 2, 0] * pts[j, 0] + RA[a, 2, 1] * pts[j, 1] + RA[a, 2, 2] * pts[j, 2] + tA[a, 2]
            UA[j, 0] = fx * x / z + cx
            UA[j, 1] = fy * y / z + cy
        for b in range(nB):
            best = 0.0
            for j in range(n):
                x = RB[b, 0, 0] * pts[j, 0] + RB[b, 0, 1] * pts[j, 1] + RB[b, 0, 2] * pts[j, 2] + tB[b, 0]
                y = RB[b, 1, 0] * pts[j, 0] + RB[b, 1, 1] * pts[j, 1] + RB[b, 1, 2] * pts[j, 2] + tB[b, 1]
                z = RB[b, 2, 0] * pts[j, 0] + RB[b, 2, 1] * pts[j, 1] + RB[b, 2, 2] * pts[j, 2] + tB[b, 2]
                du = UA[j, 0] - (fx * x / z + cx)
                dv = UA[j, 1] - (fy * y / z + cy)
                s = du * du + dv * dv
                if s > best:
                    best = s
            out[a, b] = np.sqrt(best)
    return out


def _project_stack(R, t, pts, fx, fy, cx, cy):
    P = np.einsum("aij,nj->ani", R, pts) + t[:, None, :]
    return np.stack([fx * P[..., 0] / P[..., 2] + cx, fy * P[..., 1] / P[..., 2] + cy], axis=-1)


def pairwise_max_proj_numpy(RA, tA, RB, tB, pts, fx, fy, cx, cy):
    UA = _project_stack(RA, tA, pts, fx, fy, cx, cy)
    UB = _project_stack(RB, tB, pts, fx, fy, cx, cy)
    out = np.empty((len(RA), len(RB)))
    for a in range(len(RA)):
        d2 = ((UA[a][None] - UB) ** 2).sum(axis=2)
        out[a] = np.sqrt(d2.max(axis=1))
    return out


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def _pick(nb, npy):
    return nb if _accel.USE_NUMBA else npy


def _c(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def rasterize_depth(tris, depth):
    _pick(rasterize_depth_numba, rasterize_depth_numpy)(_c(tris), depth)
    return depth


def column_counts(packed, rows, n_cols):
    return _pick(column_counts_numba, column_counts_numpy)(
        _c(packed, np.uint8), _c(rows, np.int64), int(n_cols))


def pairwise_max_dist(RA, tA, RB, tB, pts):
    return _pick(pairwise_max_dist_numba, pairwise_max_dist_numpy)(
        _c(RA), _c(tA), _c(RB), _c(tB), _c(pts))


def pairwise_max_proj(RA, tA, RB, tB, pts, fx, fy, cx, cy):
    return _pick(pairwise_max_proj_numba, pairwise_max_proj_numpy)(
        _c(RA), _c(tA), _c(RB), _c(tB), _c(pts),
        float(fx), float(fy), float(cx), float(cy))
