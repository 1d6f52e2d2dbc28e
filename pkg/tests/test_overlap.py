import numpy as np
import pytest

from voxloop.errors import EmptyInput
from voxloop.geometry import PointCloud, RigidTransform, voxelize
from voxloop.overlap import (CloudOverlap, cloud_overlap, frames_overlapped,
                             pair_overlap_matrix, voxel_pair_overlap)
from voxloop.synthetic import generate_pair


def brute_force_pair_score(ci, cj, t):
    """Direct double loop over Eq.-style definition."""
    moved = [t.rotation @ p + t.translation for p in ci]
    total = 0.0
    for pm in cj:
        total += min(np.linalg.norm(np.array(pm) - q) for q in moved)
    return float(np.exp(-total / len(cj)))


class TestVoxelPairOverlap:
    def test_identical_sets_score_one(self):
        pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
        s = voxel_pair_overlap(pts, pts, RigidTransform.identity())
        assert s == pytest.approx(1.0, abs=1e-15)

    def test_unit_distance_closed_form(self):
        s = voxel_pair_overlap([[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]],
                               RigidTransform.identity())
        assert abs(s - np.exp(-1.0)) < 1e-12

    def test_matches_double_loop(self):
        rng = np.random.default_rng(17)
        from voxloop.geometry import random_transform
        for _ in range(5):
            ci = rng.uniform(-1, 1, (20, 3))
            cj = rng.uniform(-1, 1, (20, 3))
            t = random_transform(rng, max_translation=1.0)
            fast = voxel_pair_overlap(ci, cj, t)
            assert fast == pytest.approx(brute_force_pair_score(ci, cj, t),
                                         abs=1e-12)

    def test_empty_set_rejected(self):
        with pytest.raises(EmptyInput):
            voxel_pair_overlap(np.zeros((0, 3)), [[0.0, 0.0, 0.0]],
                               RigidTransform.identity())

    def test_asymmetry_is_preserved(self):
        # Averaging runs over the second argument, so swapping sides with
        # different cardinalities changes the score.
        ci = [[0.0, 0.0, 0.0]]
        cj = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]
        ident = RigidTransform.identity()
        assert voxel_pair_overlap(ci, cj, ident) != pytest.approx(
            voxel_pair_overlap(cj, ci, ident))

    def test_single_point_monotone_in_distance(self):
        ident = RigidTransform.identity()
        scores = [voxel_pair_overlap([[0.0, 0.0, 0.0]], [[d, 0.0, 0.0]], ident)
                  for d in (0.5, 1.0, 2.0, 4.0)]
        assert all(scores[i + 1] < scores[i] for i in range(len(scores) - 1))


class TestCloudOverlap:
    def test_self_pairs_only(self):
        # Two voxels 10 m apart: self pairs score 1, cross pairs fall
        # below the threshold, so the value is exactly 1. Enumerating all
        # four pairs by hand gives the same numerator.
        cloud = PointCloud([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
        q = voxelize(cloud, 1.0)
        ident = RigidTransform.identity()
        ov = cloud_overlap(q, q, ident, th=0.1)
        manual = 0.0
        for i in range(2):
            for j in range(2):
                s = voxel_pair_overlap(q.voxel_points(i), q.voxel_points(j), ident)
                if s > 0.1:
                    manual += s
        assert ov.value == pytest.approx(manual / 2)
        assert ov.value == pytest.approx(1.0)

    def test_distant_clouds_zero(self):
        a = voxelize(PointCloud([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]]), 1.0)
        b = voxelize(PointCloud([[1000.0, 0.0, 0.0], [1001.0, 1.0, 0.0]]), 1.0)
        ov = cloud_overlap(a, b, RigidTransform.identity())
        assert ov.value == 0.0

    def test_self_overlap_at_least_one(self):
        rng = np.random.default_rng(3)
        for seed in range(4):
            pts = rng.uniform(-4, 4, (120, 3))
            q = voxelize(PointCloud(pts), 0.8)
            ov = cloud_overlap(q, q, RigidTransform.identity())
            assert ov.value >= 1.0

    def test_matrix_matches_per_pair_scores(self):
        # Brute-force equivalence on <= 10-voxel clouds: the grouped fast
        # path must equal direct per-pair evaluation of every entry.
        rng = np.random.default_rng(23)
        from voxloop.geometry import random_transform
        a = voxelize(PointCloud(rng.uniform(-1, 1, (60, 3))), 1.0)
        b = voxelize(PointCloud(rng.uniform(-1, 1, (50, 3))), 1.0)
        assert len(a) <= 10 and len(b) <= 10
        t = random_transform(rng, max_translation=1.0)
        m = pair_overlap_matrix(a, b, t)
        value = cloud_overlap(a, b, t, th=0.1).value
        manual = 0.0
        for i in range(len(a)):
            for j in range(len(b)):
                direct = voxel_pair_overlap(a.voxel_points(i),
                                            b.voxel_points(j), t)
                assert m[i, j] == pytest.approx(direct, abs=1e-12)
                if direct > 0.1:
                    manual += direct
        assert value == pytest.approx(manual / min(len(a), len(b)), abs=1e-12)

    def test_prefilter_only_zeroes_subthreshold(self):
        rng = np.random.default_rng(5)
        pts = np.vstack([rng.uniform(0, 2, (40, 3)),
                         rng.uniform(6, 9, (40, 3))])
        q = voxelize(PointCloud(pts), 0.5)
        ident = RigidTransform.identity()
        exact = cloud_overlap(q, q, ident, prefilter=False)
        fast = cloud_overlap(q, q, ident, prefilter=True)
        assert fast.value == pytest.approx(exact.value)
        zeroed = (fast.scores == 0) & (exact.scores > 0)
        assert (exact.scores[zeroed] <= 0.1).all()

    def test_bad_threshold_rejected(self):
        q = voxelize(PointCloud([[0.0, 0.0, 0.0]]), 1.0)
        with pytest.raises(ValueError):
            cloud_overlap(q, q, RigidTransform.identity(), th=1.5)


class TestFramesOverlapped:
    def test_clearly_overlapped(self):
        assert frames_overlapped(CloudOverlap(1.0, np.zeros((1, 1)), 0.1))

    def test_no_overlap(self):
        assert not frames_overlapped(CloudOverlap(0.0, np.zeros((1, 1)), 0.1))

    def test_boundary_is_strict(self):
        assert not frames_overlapped(CloudOverlap(0.5, np.zeros((1, 1)), 0.1))


class TestMonotoneWithDistance:
    def test_corridor_overlap_non_increasing(self):
        # Ground-truth overlap along a corridor must not increase as the
        # second frame slides away, plateau ties allowed.
        values = []
        for d in range(0, 21, 2):
            offset = RigidTransform(np.eye(3), [float(d), 0.0, 0.0])
            pair = generate_pair(5, offset, 0.0, style="corridor",
                                 half_extent=6.0)
            values.append(pair.gt_overlap.value)
        assert all(values[i + 1] <= values[i] + 1e-9
                   for i in range(len(values) - 1))
        assert values[0] > 1.0
        assert values[-1] == pytest.approx(0.0, abs=1e-9)
