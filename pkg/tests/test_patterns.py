import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import linear_scan_nn, within_eps
from posedist import shapes
from posedist.candidates import CandidateSet, ContinuousSymmetry, SymmetrySpec, build_candidates
from posedist.geom import PointSet, RigidTransform, SurfaceIndex
from posedist.mesh import sample_surface
from posedist.patterns import (PatternCache, PatternTable, cache_key, color_distance, load_table,
                               points_hash, precompute_patterns, save_table)


def rz(deg):
    return RigidTransform.from_axis_angle([0, 0, 1], math.radians(deg))


@pytest.fixture(scope="module")
def chamfer_setup():
    mesh = shapes.chamfered_cube(12.0, 3.0, corner=(1, 1, 1))
    pts = sample_surface(mesh, 0.5, seed=1)
    cands = CandidateSet([RigidTransform.identity(), rz(90), rz(180), rz(270)])
    table = precompute_patterns(pts, SurfaceIndex(pts), cands, 1.0)
    return mesh, pts, cands, table


def test_identity_column_all_true(chamfer_setup):
    _, _, _, table = chamfer_setup
    assert table.bits()[:, 0].all()


def test_rows_match_linear_scan(chamfer_setup):
    _, pts, cands, table = chamfer_setup
    bits = table.bits()
    P = pts.positions
    for i, T in enumerate(cands):
        d, _ = linear_scan_nn(P, T.apply(P))
        assert np.array_equal(bits[:, i], d < 1.0)


def test_chamfer_rows_localised(chamfer_setup):
    _, pts, _, table = chamfer_setup
    bits = table.bits()
    P = pts.positions
    bad = ~bits[:, 1]
    assert bad.any()
    # every rejected vertex lies near the top corner ring: the cut or its preimage
    near_top_corner = (P[:, 2] > 6 - 3.5) & (np.abs(P[:, :2]).min(axis=1) > 6 - 3.5)
    assert near_top_corner[bad].all()


def test_cylinder_all_true():
    mesh = shapes.cylinder(8.0, 10.0, segments=128)
    pts = sample_surface(mesh, 0.5)
    cands = build_candidates(SymmetrySpec(continuous=[ContinuousSymmetry(np.array([0, 0, 1.0]))]), 24,
                             scale=8)
    table = precompute_patterns(pts, SurfaceIndex(pts), cands, 1.0)
    assert table.bits().all()
    for i in (5, 17):
        assert within_eps(pts.positions, cands[i].apply(pts.positions), 1.0).all()


def test_strict_inequality_at_boundary():
    pts = PointSet(np.array([[0.0, 0, 0], [2.0, 0, 0]]))
    shift = RigidTransform(np.eye(3), [1.0, 0, 0])
    table = precompute_patterns(pts, SurfaceIndex(pts), CandidateSet([RigidTransform.identity(), shift]), 1.0)
    # (0,0,0)->(1,0,0) is exactly 1.0 from both points: excluded; (2,0,0)->(3,0,0) also 1.0
    assert not table.bits()[:, 1].any()


def test_colour_condition():
    P = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    C = np.array([[1.0, 0, 0], [0.0, 0, 1]])
    pts = PointSet(P, C)
    swap = RigidTransform(np.diag([-1.0, -1.0, 1.0]), [1.0, 0, 0])
    cands = CandidateSet([RigidTransform.identity(), swap])
    geo = precompute_patterns(pts, SurfaceIndex(pts), cands, 0.5)
    col = precompute_patterns(pts, SurfaceIndex(pts), cands, 0.5, color_tol=0.3)
    assert geo.bits()[:, 1].all()
    assert not col.bits()[:, 1].any()
    assert col.bits()[:, 0].all()


def test_colour_required():
    pts = PointSet(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        precompute_patterns(pts, SurfaceIndex(pts), CandidateSet([RigidTransform.identity()]), 1.0,
                            color_tol=0.3)


def test_bad_epsilon():
    pts = PointSet(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        precompute_patterns(pts, SurfaceIndex(pts), CandidateSet([RigidTransform.identity()]), 0.0)


class TestColorDistance:
    def test_identical(self):
        assert color_distance([0.2, 0.4, 0.6], [0.2, 0.4, 0.6]) == 0

    def test_black_white(self):
        assert color_distance([0, 0, 0], [1, 1, 1]) == pytest.approx(math.sqrt(3))

    @given(st.lists(st.floats(0, 1), min_size=6, max_size=6))
    @settings(max_examples=1000, deadline=None)
    def test_symmetric_and_bounded(self, v):
        a, b = v[:3], v[3:]
        d = color_distance(a, b)
        assert d == color_distance(b, a)
        assert 0 <= d <= math.sqrt(3) + 1e-12


def _random_table(rng, n=300, k=21):
    bits = rng.random((n, k)) < 0.7
    bits[:, 0] = True
    return PatternTable(np.packbits(bits, axis=1, bitorder="little"), k, 1.0, None, 4, 9,
                        "ab" * 32, "cd" * 32), bits


def test_strict_pattern_and_counts(rng):
    table, bits = _random_table(rng)
    rows = rng.choice(300, 40, replace=False)
    assert np.array_equal(table.strict_pattern(rows), bits[rows].all(axis=0))
    assert np.array_equal(table.column_counts(rows), bits[rows].sum(axis=0))
    assert table.strict_pattern([]).all()


def test_bytes_round_trip(rng, tmp_path):
    table, bits = _random_table(rng)
    t2 = PatternTable.frombytes(table.tobytes())
    assert np.array_equal(t2.bits(), bits)
    assert (t2.n_cands, t2.epsilon, t2.color_zeta, t2.object_id, t2.seed) == (21, 1.0, None, 4, 9)
    assert t2.cand_hash == table.cand_hash and t2.points_hash == table.points_hash
    save_table(tmp_path / "x.pat", table)
    assert (tmp_path / "x.pat").read_bytes() == table.tobytes()
    assert np.array_equal(load_table(tmp_path / "x.pat").packed, table.packed)


def test_header_layout(rng):
    table, _ = _random_table(rng)
    buf = PatternTable(table.packed, 21, 1.0, 0.25, 4, 9, table.cand_hash, table.points_hash).tobytes()
    assert buf[:8] == b"POSEDPAT"
    assert int.from_bytes(buf[8:12], "little") == 1
    assert int.from_bytes(buf[12:20], "little") == 300
    assert int.from_bytes(buf[20:28], "little") == 21
    assert np.frombuffer(buf[28:44], "<f8").tolist() == [1.0, 0.25]
    assert len(buf) == 8 + 4 + 8 + 8 + 16 + 16 + 64 + 300 * 3


def test_corrupt_buffers(rng):
    table, _ = _random_table(rng)
    buf = table.tobytes()
    with pytest.raises(ValueError):
        PatternTable.frombytes(buf[:20])
    with pytest.raises(ValueError):
        PatternTable.frombytes(b"X" + buf[1:])
    with pytest.raises(ValueError):
        PatternTable.frombytes(buf[:-1])


def test_deterministic_bytes():
    mesh = shapes.box(6, 4, 3)
    pts = sample_surface(mesh, 0.5, seed=2)
    cands = CandidateSet([RigidTransform.identity(), rz(180), rz(90)])
    a = precompute_patterns(pts, SurfaceIndex(pts), cands, 1.0)
    b = precompute_patterns(pts, SurfaceIndex(pts), cands, 1.0)
    assert a.tobytes() == b.tobytes()


def test_cache(tmp_path):
    pts = sample_surface(shapes.box(4, 4, 4), 0.5)
    cands = CandidateSet([RigidTransform.identity(), rz(90)])
    table = precompute_patterns(pts, SurfaceIndex(pts), cands, 1.0, object_id=3)
    cache = PatternCache(tmp_path)
    key = cache_key(3, 0, 0.5, "mesh", cands, 1.0, None)
    assert cache.get(3, key, points_hash(pts), cands.hash) is None
    cache.put(3, key, table)
    got = cache.get(3, key, points_hash(pts), cands.hash)
    assert got is not None and got.tobytes() == table.tobytes()
    # stale provenance is refused
    assert cache.get(3, key, "0" * 64, cands.hash) is None
    assert key != cache_key(3, 0, 0.5, "mesh", cands, 1.0, 0.3)
    assert key != cache_key(3, 1, 0.5, "mesh", cands, 1.0, None)
