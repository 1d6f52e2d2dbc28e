import numpy as np
import pytest

from voxloop.errors import EmptyInput, InvalidPoint, NotARotation
from voxloop.geometry import (PointCloud, RigidTransform, apply_transform,
                              compose, invert, nearest_neighbor,
                              random_transform, rotation_about_z, voxelize)


class TestRigidTransform:
    def test_identity_roundtrip(self):
        t = RigidTransform.identity()
        p = np.array([[1.0, 2.0, 3.0]])
        np.testing.assert_allclose(t.apply(p), p)

    def test_rejects_non_rotation(self):
        with pytest.raises(NotARotation):
            RigidTransform(np.eye(3) * 2.0, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(NotARotation):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_matrix_roundtrip(self):
        t = random_transform(np.random.default_rng(3))
        again = RigidTransform.from_matrix(t.as_matrix().ravel())
        np.testing.assert_allclose(again.rotation, t.rotation)
        np.testing.assert_allclose(again.translation, t.translation)


class TestApplyTransform:
    def test_identity_leaves_cloud(self):
        cloud = PointCloud(np.random.default_rng(0).uniform(-1, 1, (10, 3)))
        out = apply_transform(cloud, RigidTransform.identity())
        np.testing.assert_allclose(out.points, cloud.points)

    def test_pure_translation(self):
        cloud = PointCloud([[0.0, 0.0, 0.0]])
        t = RigidTransform(np.eye(3), [1.0, 2.0, 3.0])
        np.testing.assert_allclose(apply_transform(cloud, t).points,
                                   [[1.0, 2.0, 3.0]])

    def test_quarter_turn_about_z(self):
        cloud = PointCloud([[1.0, 0.0, 0.0]])
        t = RigidTransform(rotation_about_z(np.pi / 2), np.zeros(3))
        np.testing.assert_allclose(apply_transform(cloud, t).points,
                                   [[0.0, 1.0, 0.0]], atol=1e-12)

    def test_preserves_pairwise_distances(self):
        rng = np.random.default_rng(11)
        cloud = PointCloud(rng.uniform(-5, 5, (40, 3)))
        t = random_transform(rng)
        moved = apply_transform(cloud, t)
        d0 = np.linalg.norm(cloud.points[:, None] - cloud.points[None], axis=2)
        d1 = np.linalg.norm(moved.points[:, None] - moved.points[None], axis=2)
        np.testing.assert_allclose(d1, d0, rtol=1e-9, atol=1e-9)


class TestComposeInvert:
    def test_compose_with_identity(self):
        t = random_transform(np.random.default_rng(5))
        out = compose(RigidTransform.identity(), t)
        np.testing.assert_allclose(out.rotation, t.rotation)
        np.testing.assert_allclose(out.translation, t.translation)

    def test_invert_translation(self):
        t = RigidTransform(np.eye(3), [1.0, 0.0, 0.0])
        np.testing.assert_allclose(invert(t).translation, [-1.0, 0.0, 0.0])

    def test_compose_matches_sequential_apply(self):
        rng = np.random.default_rng(7)
        a, b = random_transform(rng), random_transform(rng)
        p = rng.uniform(-2, 2, (15, 3))
        np.testing.assert_allclose(compose(a, b).apply(p), a.apply(b.apply(p)),
                                   atol=1e-12)

    def test_invert_compose_is_identity(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            t = random_transform(rng)
            round_trip = compose(invert(t), t)
            np.testing.assert_allclose(round_trip.rotation, np.eye(3), atol=1e-9)
            np.testing.assert_allclose(round_trip.translation, np.zeros(3),
                                       atol=1e-9)


class TestPointCloud:
    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            PointCloud(np.zeros((0, 3)))

    def test_non_finite_rejected_with_index(self):
        pts = np.zeros((4, 3))
        pts[2, 1] = np.nan
        with pytest.raises(InvalidPoint) as err:
            PointCloud(pts)
        assert err.value.index == 2


class TestVoxelize:
    def test_two_points_one_voxel(self):
        cloud = PointCloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        vc = voxelize(cloud, 2.0)
        assert len(vc) == 1
        np.testing.assert_allclose(vc.voxels[0].centroid, [0.5, 0.0, 0.0])

    def test_disjoint_cells(self):
        cloud = PointCloud([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
        vc = voxelize(cloud, 2.0)
        assert len(vc) == 2
        centroids = sorted(tuple(v.centroid) for v in vc.voxels)
        assert centroids == [(0.0, 0.0, 0.0), (5.0, 0.0, 0.0)]

    def test_partition_of_uniform_points(self):
        # Independent oracle: recompute each point's cell by hand and
        # check the voxel index sets form exactly that partition.
        rng = np.random.default_rng(42)
        pts = rng.uniform(0, 10, (1000, 3))
        vc = voxelize(PointCloud(pts), 1.0)
        seen = np.zeros(1000, dtype=int)
        for v in vc.voxels:
            seen[v.point_indices] += 1
            keys = np.floor(pts[v.point_indices] / 1.0).astype(int)
            assert (keys == np.array(v.grid_key)).all()
        assert (seen == 1).all()
        assert sum(len(v.point_indices) for v in vc.voxels) == 1000

    def test_centroid_inside_cell(self):
        rng = np.random.default_rng(1)
        vc = voxelize(PointCloud(rng.uniform(-4, 4, (500, 3))), 0.7)
        for v in vc.voxels:
            lo = np.array(v.grid_key) * 0.7
            assert (v.centroid >= lo - 1e-12).all()
            assert (v.centroid < lo + 0.7 + 1e-12).all()

    def test_bad_voxel_size(self):
        with pytest.raises(ValueError):
            voxelize(PointCloud([[0.0, 0.0, 0.0]]), 0.0)


class TestNearestNeighbor:
    def test_simple(self):
        cloud = PointCloud([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        idx, dist = nearest_neighbor([0.0, 0.0, 0.0], cloud)
        assert idx == 0
        assert dist == pytest.approx(1.0)

    def test_coincident_point(self):
        cloud = PointCloud([[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
        idx, dist = nearest_neighbor([2.0, 2.0, 2.0], cloud)
        assert idx == 1
        assert dist == 0.0

    def test_tie_breaks_to_lowest_index(self):
        cloud = PointCloud([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        idx, _ = nearest_neighbor([0.0, 0.0, 0.0], cloud)
        assert idx == 0

    @pytest.mark.parametrize("n_points", [100, 500])
    def test_matches_exhaustive_scan(self, n_points):
        rng = np.random.default_rng(2024)
        pts = rng.uniform(-10, 10, (n_points, 3))
        cloud = PointCloud(pts)
        for _ in range(50):
            q = rng.uniform(-12, 12, 3)
            idx, dist = nearest_neighbor(q, cloud, radius_hint=1.5)
            brute = np.linalg.norm(pts - q, axis=1)
            assert idx == int(np.argmin(brute))
            assert dist == pytest.approx(float(brute.min()))
