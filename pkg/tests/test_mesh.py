import numpy as np
import pytest
from PIL import Image
from plyfile import PlyData, PlyElement

from oracles import linear_scan_nn
from posedist import shapes
from posedist.geom import SurfaceIndex
from posedist.mesh import TriangleMesh, read_ply, sample_surface, triangle_areas, write_ply


def unit_square():
    V = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    return TriangleMesh(V, np.array([[0, 1, 2], [0, 2, 3]]))


def surface_probes(mesh, n, rng):
    """Area-weighted uniform random points on the mesh (independent of the sampler)."""
    A = triangle_areas(mesh.vertices, mesh.faces)
    tri = rng.choice(len(A), size=n, p=A / A.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    T = mesh.triangles()[tri]
    return ((1 - r1)[:, None] * T[:, 0] + (r1 * (1 - r2))[:, None] * T[:, 1]
            + (r1 * r2)[:, None] * T[:, 2])


class TestTriangleMesh:
    def test_drops_degenerate(self):
        V = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], dtype=float)
        m = TriangleMesh(V, np.array([[0, 1, 2], [0, 1, 3]]))
        assert len(m.faces) == 1

    def test_index_range(self):
        with pytest.raises(ValueError):
            TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))

    def test_area(self):
        assert shapes.box(2, 3, 4).area() == pytest.approx(2 * (6 + 8 + 12))


class TestSampling:
    def test_unit_square_cells(self):
        s = sample_surface(unit_square(), 0.5, seed=0)
        # points on the far edges belong to the last cell
        ij = np.clip(np.floor(s.positions[:, :2] / 0.5).astype(int), 0, 1)
        cells = {(int(a), int(b)) for a, b in ij}
        assert cells == {(0, 0), (0, 1), (1, 0), (1, 1)}

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_large_square_cells(self, seed):
        V = np.array([[0, 0, 0], [10, 0, 0], [10, 10, 0], [0, 10, 0]], dtype=float)
        s = sample_surface(TriangleMesh(V, np.array([[0, 1, 2], [0, 2, 3]])), 0.5, seed=seed)
        counts = np.zeros((20, 20), dtype=int)
        ij = np.clip(np.floor(s.positions[:, :2] / 0.5).astype(int), 0, 19)
        np.add.at(counts, (ij[:, 0], ij[:, 1]), 1)
        assert counts.min() >= 1

    def test_empty_mesh(self):
        with pytest.raises(ValueError):
            sample_surface(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)), 0.5)

    def test_bad_resolution(self):
        with pytest.raises(ValueError):
            sample_surface(unit_square(), 0.0)

    def test_sphere_coverage(self, rng):
        m = shapes.uv_sphere(10.0)
        s = sample_surface(m, 0.5, seed=3)
        d, _ = SurfaceIndex(s).query(surface_probes(m, 100_000, rng))
        assert d.max() < 0.5

    def test_coverage_vs_linear_scan(self, rng):
        m = shapes.box(6, 4, 3)
        s = sample_surface(m, 0.5, seed=0)
        d, _ = linear_scan_nn(s.positions, surface_probes(m, 5000, rng))
        assert d.max() < 0.5

    def test_samples_on_surface(self):
        m = shapes.box(6, 4, 3)
        P = sample_surface(m, 0.5).positions
        half = np.array([3, 2, 1.5])
        on_face = np.isclose(np.abs(P), half, atol=1e-9).any(axis=1)
        assert on_face.all()
        assert (np.abs(P) <= half + 1e-9).all()

    def test_count_scales_with_area(self):
        small = [len(sample_surface(shapes.box(10, 10, 2), 0.5, seed=k)) for k in range(3)]
        big = [len(sample_surface(shapes.box(20, 10, 2), 0.5, seed=k)) for k in range(3)]
        ratio_area = shapes.box(20, 10, 2).area() / shapes.box(10, 10, 2).area()
        for a, b in zip(small, big):
            assert abs(b / a / ratio_area - 1) < 0.2

    def test_deterministic(self):
        m = shapes.cylinder(5, 8, 32)
        a = sample_surface(m, 0.5, seed=7)
        b = sample_surface(m, 0.5, seed=7)
        c = sample_surface(m, 0.5, seed=8)
        assert np.array_equal(a.positions, b.positions)
        assert not np.array_equal(a.positions, c.positions)

    def test_vertex_colours_interpolated(self):
        m = unit_square()
        cols = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
        mc = TriangleMesh(m.vertices, m.faces, vertex_colors=cols)
        s = sample_surface(mc, 0.2)
        # colour = (x, y, 0) for this bilinear-compatible assignment on each triangle
        np.testing.assert_allclose(s.colors[:, 0], s.positions[:, 0], atol=1e-9)
        np.testing.assert_allclose(s.colors[:, 1], s.positions[:, 1], atol=1e-9)

    def test_texture_colours(self):
        m = unit_square()
        tex = np.zeros((8, 8, 3))
        tex[:, 4:] = [1, 0, 0]     # right half red
        uv = m.vertices[:, :2]
        mt = TriangleMesh(m.vertices, m.faces, uv=uv, texture=tex)
        s = sample_surface(mt, 0.1)
        right = s.positions[:, 0] > 0.6
        left = s.positions[:, 0] < 0.4
        assert np.all(s.colors[right, 0] == 1.0)
        assert np.all(s.colors[left, 0] == 0.0)


class TestPly:
    @pytest.mark.parametrize("binary", [False, True])
    def test_round_trip(self, tmp_path, binary):
        m = shapes.box(2, 4, 6)
        cols = np.linspace(0, 1, len(m.vertices) * 3).reshape(-1, 3)
        m = TriangleMesh(m.vertices, m.faces, vertex_colors=cols)
        p = tmp_path / "m.ply"
        write_ply(p, m, binary=binary)
        r = read_ply(p)
        np.testing.assert_allclose(r.vertices, m.vertices, atol=1e-6)
        assert np.array_equal(r.faces, m.faces)
        np.testing.assert_allclose(r.vertex_colors, np.round(cols * 255) / 255, atol=1e-12)

    def test_quad_faces_and_texture(self, tmp_path):
        V = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)],
                     dtype=[("x", "f4"), ("y", "f4"), ("z", "f4")])
        F = np.empty(1, dtype=[("vertex_indices", "i4", (4,)), ("texcoord", "f4", (8,))])
        F["vertex_indices"][0] = [0, 1, 2, 3]
        F["texcoord"][0] = [0, 0, 1, 0, 1, 1, 0, 1]
        ply = PlyData([PlyElement.describe(V, "vertex"), PlyElement.describe(F, "face")],
                      text=True, comments=["TextureFile tex.png"])
        ply.write(str(tmp_path / "q.ply"))
        img = np.zeros((4, 4, 3), dtype=np.uint8)
        img[:, :] = [0, 255, 0]
        Image.fromarray(img).save(tmp_path / "tex.png")
        m = read_ply(tmp_path / "q.ply")
        assert m.faces.shape == (2, 3)
        assert m.uv.shape == (2, 3, 2)
        assert m.has_color
        s = sample_surface(m, 0.25)
        assert np.all(s.colors == [0, 1, 0])


class TestShapes:
    def test_outward_normals(self):
        for m in (shapes.box(3, 4, 5), shapes.chamfered_cube(10, 2), shapes.cylinder(3, 4, 16),
                  shapes.l_shape()):
            T = m.triangles()
            n = np.cross(T[:, 1] - T[:, 0], T[:, 2] - T[:, 0])
            # divergence theorem: enclosed volume positive when normals point out
            vol = np.einsum("ij,ij->i", n, T[:, 0]).sum() / 6
            assert vol > 0

    def test_chamfer_volume(self):
        m = shapes.chamfered_cube(10, 3)
        T = m.triangles()
        n = np.cross(T[:, 1] - T[:, 0], T[:, 2] - T[:, 0])
        vol = np.einsum("ij,ij->i", n, T[:, 0]).sum() / 6
        assert vol == pytest.approx(1000 - 27 / 6)

    def test_l_shape_volume(self):
        m = shapes.l_shape(40, 24, 10, 8)
        T = m.triangles()
        n = np.cross(T[:, 1] - T[:, 0], T[:, 2] - T[:, 0])
        vol = np.einsum("ij,ij->i", n, T[:, 0]).sum() / 6
        assert vol == pytest.approx((40 * 10 + 14 * 10) * 8)
