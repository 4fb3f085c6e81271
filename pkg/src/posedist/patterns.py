"""Per-vertex elementary symmetry patterns, stored as packed bitset rows.

Row j, bit i is set iff candidate T_i maps sample v_j to within ``epsilon``
of the model surface (and, with a colour tolerance, onto a point of similar
colour). These rows depend only on the object, so they are computed once and
cached; per image only the visible rows are combined.
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .candidates import CandidateSet
from .geom import PointSet, SurfaceIndex

log = logging.getLogger(__name__)

MAGIC = b"POSEDPAT"
VERSION = 1
# magic, version, n_rows, n_cands, epsilon, zeta (NaN = off), object id, seed,
# candidate-set sha256, sample-set sha256
_HEADER = struct.Struct("<8sIQQddqq32s32s")


def points_hash(points: PointSet) -> str:
    h = hashlib.sha256(np.ascontiguousarray(points.positions, dtype="<f8").tobytes())
    if points.colors is not None:
        h.update(np.ascontiguousarray(points.colors, dtype="<f8").tobytes())
    return h.hexdigest()


def color_distance(c1, c2):
    """Euclidean distance in linear RGB, components in [0, 1]."""
    d = np.asarray(c1, dtype=np.float64) - np.asarray(c2, dtype=np.float64)
    return np.sqrt((d * d).sum(axis=-1))


@dataclass(frozen=True, eq=False)
class PatternTable:
    packed: np.ndarray          # (n_rows, ceil(n_cands / 8)) uint8, little bit order
    n_cands: int
    epsilon: float
    color_zeta: Optional[float] = None
    object_id: int = -1
    seed: int = 0
    cand_hash: str = ""
    points_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.ascontiguousarray(self.packed, dtype=np.uint8)
        p.flags.writeable = False
        object.__setattr__(self, "packed", p)

    @property
    def n_rows(self) -> int:
        return self.packed.shape[0]

    def bits(self) -> np.ndarray:
        """Unpacked (n_rows, n_cands) boolean matrix."""
        return np.unpackbits(self.packed, axis=1, count=self.n_cands, bitorder="little").astype(bool)

    def row(self, j: int) -> np.ndarray:
        return np.unpackbits(self.packed[j], count=self.n_cands, bitorder="little").astype(bool)

    def column_counts(self, rows) -> np.ndarray:
        return kernels.column_counts(self.packed, np.asarray(rows, dtype=np.int64), self.n_cands)

    def strict_pattern(self, rows) -> np.ndarray:
        """Intersection of the elementary patterns of ``rows`` (all-true if empty)."""
        rows = np.asarray(rows, dtype=np.int64)
        if len(rows) == 0:
            return np.ones(self.n_cands, dtype=bool)
        acc = np.bitwise_and.reduce(self.packed[rows], axis=0)
        return np.unpackbits(acc, count=self.n_cands, bitorder="little").astype(bool)

    def tobytes(self) -> bytes:
        zeta = math.nan if self.color_zeta is None else float(self.color_zeta)
        head = _HEADER.pack(MAGIC, VERSION, self.n_rows, self.n_cands, float(self.epsilon), zeta,
                            int(self.object_id), int(self.seed),
                            bytes.fromhex(self.cand_hash or "0" * 64),
                            bytes.fromhex(self.points_hash or "0" * 64))
        return head + self.packed.tobytes(order="C")

    @classmethod
    def frombytes(cls, buf: bytes) -> "PatternTable":
        if len(buf) < _HEADER.size:
            raise ValueError("truncated pattern table")
        magic, ver, n_rows, n_cands, eps, zeta, oid, seed, ch, ph = _HEADER.unpack_from(buf)
        if magic != MAGIC:
            raise ValueError("not a pattern table file")
        if ver != VERSION:
            raise ValueError(f"unsupported pattern table version {ver}")
        n_bytes = (n_cands + 7) // 8
        body = np.frombuffer(buf, dtype=np.uint8, offset=_HEADER.size)
        if body.size != n_rows * n_bytes:
            raise ValueError("pattern table size mismatch")
        return cls(body.reshape(n_rows, n_bytes).copy(), int(n_cands), eps,
                   None if math.isnan(zeta) else zeta, oid, seed, ch.hex(), ph.hex())


def save_table(path, table: PatternTable) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(table.tobytes())
    tmp.replace(path)


def load_table(path) -> PatternTable:
    return PatternTable.frombytes(Path(path).read_bytes())


def precompute_patterns(points: PointSet, index: SurfaceIndex, cands: CandidateSet,
                        epsilon: float, color_tol: Optional[float] = None, *,
                        object_id: int = -1, seed: int = 0, workers: int = 1) -> PatternTable:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if len(points) == 0:
        raise ValueError("no sample points")
    if color_tol is not None and (points.colors is None or index.points.colors is None):
        raise ValueError("colour tolerance given but the points carry no colours")
    n, k = len(points), len(cands)
    bits = np.zeros((n, k), dtype=bool)
    P = points.positions
    for i, T in enumerate(cands):
        d, nn = index.query(P @ T.R.T + T.t, workers=workers)
        ok = d < epsilon
        if color_tol is not None:
            ok &= color_distance(index.points.colors[nn], points.colors) < color_tol
        bits[:, i] = ok
    packed = np.packbits(bits, axis=1, bitorder="little")
    return PatternTable(packed, k, float(epsilon), color_tol, object_id, seed,
                        cands.hash, points_hash(points))


def cache_key(object_id: int, seed: int, resolution: float, mesh_digest: str,
              cands: CandidateSet, epsilon: float, zeta: Optional[float]) -> str:
    h = hashlib.sha256()
    h.update(repr((int(object_id), int(seed), float(resolution), mesh_digest, cands.hash,
                   float(epsilon), None if zeta is None else float(zeta))).encode())
    return h.hexdigest()[:20]


class PatternCache:
    """Directory of pattern tables keyed by everything that determines their bytes."""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, object_id: int, key: str) -> Path:
        return self.root / f"obj_{int(object_id):06d}_{key}.pat"

    def get(self, object_id: int, key: str, expect_points: str, expect_cands: str):
        p = self.path(object_id, key)
        if not p.exists():
            return None
        try:
            t = load_table(p)
        except ValueError as e:
            log.warning("ignoring unreadable cache %s: %s", p, e)
            return None
        if t.points_hash != expect_points or t.cand_hash != expect_cands:
            log.warning("cache %s does not match current samples/candidates", p)
            return None
        return t

    def put(self, object_id: int, key: str, table: PatternTable) -> Path:
        p = self.path(object_id, key)
        save_table(p, table)
        return p
