import numpy as np
import pytest

from radartwin import (DegenerateNeighborhood, MismatchedFrameShape, ParseError,
                       PointCloudFrame, estimate_normals, load_ply, save_ply,
                       subsample, surface_sampling, time_average_frames)


def sphere_cloud(n=400, radius=1.0, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, 3))
    pts = radius * v / np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloudFrame(pts)


class TestEstimateNormals:
    def test_plane_normals(self):
        rng = np.random.default_rng(1)
        pts = np.column_stack([rng.uniform(-1, 1, 100), rng.uniform(-1, 1, 100),
                               np.zeros(100)])
        out = estimate_normals(PointCloudFrame(pts), 8, viewpoint=(0, 0, 1))
        assert np.allclose(out.normals, [0, 0, 1], atol=1e-6)

    def test_arbitrary_plane_orientations(self):
        # any plane-sampled cloud gives normals within 1e-6 rad of the plane
        # normal, sign fixed by the viewpoint
        rng = np.random.default_rng(2)
        for _ in range(8):
            n = rng.standard_normal(3)
            n /= np.linalg.norm(n)
            u = np.cross(n, [1, 0.3, -0.2])
            u /= np.linalg.norm(u)
            v = np.cross(n, u)
            coef = rng.uniform(-1, 1, (80, 2))
            pts = coef[:, :1] * u + coef[:, 1:] * v
            out = estimate_normals(PointCloudFrame(pts), 10, viewpoint=3 * n)
            dots = np.clip(out.normals @ n, -1, 1)
            assert np.all(np.arccos(dots) < 1e-6)

    def test_sphere_north_pole(self):
        # symmetric rings under the pole keep the PCA normal on-axis
        rings = []
        for polar in (0.08, 0.16):
            az = np.linspace(0, 2 * np.pi, 8, endpoint=False)
            rings.append(np.column_stack([np.sin(polar) * np.cos(az),
                                          np.sin(polar) * np.sin(az),
                                          np.full(8, np.cos(polar))]))
        pts = np.vstack(rings + [[[0, 0, 1.0]]])
        out = estimate_normals(PointCloudFrame(pts), 16, viewpoint=(0, 0, 10))
        assert np.allclose(out.normals[-1], [0, 0, 1], atol=1e-3)

    def test_collinear_raises(self):
        pts = np.outer(np.arange(5, dtype=float), [1.0, 2.0, -0.5])
        with pytest.raises(DegenerateNeighborhood):
            estimate_normals(PointCloudFrame(pts), 4, viewpoint=(0, 0, 1))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            estimate_normals(PointCloudFrame(np.eye(3)), 16, viewpoint=(0, 0, 1))


class TestTimeAverage:
    def test_midpoint(self):
        a = PointCloudFrame([[0, 0, 0]], timestamp=0.0)
        b = PointCloudFrame([[0, 0, 2]], timestamp=1.0)
        avg = time_average_frames([a, b])
        assert np.allclose(avg.points, [[0, 0, 1]])
        assert avg.timestamp == 0.5

    def test_single_frame_identity(self):
        a = PointCloudFrame([[1, 2, 3], [4, 5, 6]], timestamp=2.0)
        avg = time_average_frames([a])
        assert np.array_equal(avg.points, a.points)
        assert avg.timestamp == a.timestamp

    def test_oscillation_cancels(self):
        frames = [PointCloudFrame([[0, 0, np.sin(2 * np.pi * t / 4)]], timestamp=t)
                  for t in range(4)]
        avg = time_average_frames(frames)
        assert abs(avg.points[0, 2]) < 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(3)
        frames = [PointCloudFrame(rng.standard_normal((10, 3))) for _ in range(4)]
        scaled = [PointCloudFrame(2.5 * f.points) for f in frames]
        assert np.allclose(time_average_frames(scaled).points,
                           2.5 * time_average_frames(frames).points)

    def test_mismatch_raises(self):
        a = PointCloudFrame(np.zeros((3, 3)))
        b = PointCloudFrame(np.zeros((4, 3)))
        with pytest.raises(MismatchedFrameShape):
            time_average_frames([a, b])


class TestSubsample:
    def test_square_corners_noop(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
        out = subsample(PointCloudFrame(pts), 4, seed=0)
        assert sorted(map(tuple, out.points)) == sorted(map(tuple, pts))

    def test_segment_endpoints(self):
        t = np.linspace(0, 1, 1000)
        pts = np.column_stack([t, np.zeros_like(t), np.zeros_like(t)])
        out = subsample(PointCloudFrame(pts), 2, seed=0)
        xs = sorted(out.points[:, 0])
        assert xs[0] == pytest.approx(0.0, abs=1e-12)
        assert xs[1] == pytest.approx(1.0, abs=1e-12)

    def test_deterministic(self):
        cloud = sphere_cloud(300)
        a = subsample(cloud, 50, seed=7)
        b = subsample(cloud, 50, seed=7)
        assert np.array_equal(a.points, b.points)

    def test_subset_and_permutation(self):
        cloud = sphere_cloud(64)
        out = subsample(cloud, 20, seed=1)
        in_set = {tuple(p) for p in cloud.points}
        assert all(tuple(p) in in_set for p in out.points)
        full = subsample(cloud, 64, seed=1)
        assert sorted(map(tuple, full.points)) == sorted(map(tuple, cloud.points))

    def test_normals_follow(self):
        cloud = sphere_cloud(100)
        cloud = PointCloudFrame(cloud.points, cloud.points /
                                np.linalg.norm(cloud.points, axis=1, keepdims=True))
        out = subsample(cloud, 10, seed=0)
        assert np.allclose(out.normals, out.points / np.linalg.norm(
            out.points, axis=1, keepdims=True))


class TestSurfaceSampling:
    def test_uniform_grid_weights(self):
        g = np.linspace(0, 1, 11)
        gx, gy = np.meshgrid(g, g, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
        s = surface_sampling(PointCloudFrame(pts))
        assert np.all(s.area_weights > 0)
        inner = s.area_weights.reshape(11, 11)[3:-3, 3:-3]
        assert inner.std() / inner.mean() < 1e-9  # interior weights identical

    def test_positive_invariant(self):
        s = surface_sampling(sphere_cloud(200))
        assert np.all(s.area_weights > 0)


class TestPly:
    def test_round_trip(self, tmp_path):
        pts = np.array([[0.123456789, -1.0, 2.5e-4],
                        [1e3, 0.333333333, -9.87654321],
                        [0.8, 0.0, 0.0]])
        cloud = PointCloudFrame(pts, timestamp=1.25)
        path = tmp_path / "c.ply"
        save_ply(cloud, path)
        back = load_ply(path)
        assert np.allclose(back.points, pts, rtol=1e-8, atol=0)
        assert back.timestamp == pytest.approx(1.25)

    def test_round_trip_normals(self, tmp_path):
        n = np.array([[0, 0, 1.0], [np.sqrt(0.5), 0, np.sqrt(0.5)]])
        cloud = PointCloudFrame([[0, 0, 0], [1, 1, 1]], n)
        path = tmp_path / "n.ply"
        save_ply(cloud, path)
        back = load_ply(path)
        assert np.all(np.abs(np.linalg.norm(back.normals, axis=1) - 1) < 1e-6)
        assert np.allclose(back.normals, n, atol=1e-6)

    def test_missing_z_property(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 1\n"
                        "property float x\nproperty float y\nend_header\n0 0\n")
        with pytest.raises(ParseError):
            load_ply(path)

    def test_binary_rejected(self, tmp_path):
        path = tmp_path / "bin.ply"
        path.write_text("ply\nformat binary_little_endian 1.0\n"
                        "element vertex 0\nproperty float x\nproperty float y\n"
                        "property float z\nend_header\n")
        with pytest.raises(ParseError) as exc:
            load_ply(path)
        assert exc.value.line == 2

    def test_bad_row_reports_line(self, tmp_path):
        path = tmp_path / "row.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 2\n"
                        "property float x\nproperty float y\nproperty float z\n"
                        "end_header\n0 0 0\n1 nope 1\n")
        with pytest.raises(ParseError) as exc:
            load_ply(path)
        assert exc.value.line == 9
