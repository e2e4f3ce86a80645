"""Geometry tests: worked examples plus exhaustive-search oracles."""

import numpy as np
import pytest

from helpers import fps_exhaustive, knn_exhaustive
from pointseq import geometry as geo


def random_cloud(rng, n, duplicates=False):
    points = rng.uniform(-1, 1, (n, 3))
    if duplicates and n >= 4:
        # copy a few rows on top of others to force exact distance ties
        k = max(1, n // 8)
        src = rng.integers(0, n, k)
        dst = rng.integers(0, n, k)
        points[dst] = points[src]
    return geo.PointCloud(points)


class TestPointCloud:
    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            geo.PointCloud(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            geo.PointCloud(np.zeros((0, 3)))

    def test_rejects_non_finite(self):
        points = np.zeros((2, 3))
        points[1, 1] = np.nan
        with pytest.raises(ValueError):
            geo.PointCloud(points)

    def test_labels_must_match_length(self):
        with pytest.raises(ValueError):
            geo.PointCloud(np.zeros((2, 3)), labels=[1])

    def test_scale_spec_strictly_increasing(self):
        geo.ScaleSpec((16, 32, 64, 128))
        with pytest.raises(ValueError):
            geo.ScaleSpec((16, 16))
        with pytest.raises(ValueError):
            geo.ScaleSpec((32, 16))
        with pytest.raises(ValueError):
            geo.ScaleSpec(())


class TestNormalizeUnitBall:
    def test_two_point_example(self):
        cloud = geo.PointCloud([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        out = geo.normalize_unit_ball(cloud)
        np.testing.assert_allclose(out.points, [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])

    def test_identical_points_collapse_to_zero(self):
        cloud = geo.PointCloud(np.full((5, 3), 3.25))
        out = geo.normalize_unit_ball(cloud)
        np.testing.assert_array_equal(out.points, np.zeros((5, 3)))

    def test_single_point_maps_to_origin(self):
        out = geo.normalize_unit_ball(geo.PointCloud([[9.0, -2.0, 4.0]]))
        np.testing.assert_array_equal(out.points, [[0.0, 0.0, 0.0]])

    @pytest.mark.parametrize("seed", range(20))
    def test_norms_bounded_by_one(self, seed):
        rng = np.random.default_rng(seed)
        cloud = random_cloud(rng, int(rng.integers(2, 200)))
        out = geo.normalize_unit_ball(cloud)
        norms = np.linalg.norm(out.points, axis=1)
        assert norms.max() <= 1.0 + 1e-9

    def test_labels_preserved(self):
        cloud = geo.PointCloud(np.eye(3), labels=[0, 1, 2])
        out = geo.normalize_unit_ball(cloud)
        np.testing.assert_array_equal(out.labels, [0, 1, 2])


class TestFarthestPointSample:
    def test_unit_square_example(self):
        cloud = geo.PointCloud(
            [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]
        )
        picked = geo.farthest_point_sample(cloud, 2)
        # all corners tie on distance to the mean, so the walk starts at the
        # lexicographic minimum and jumps to the opposite corner
        np.testing.assert_array_equal(picked.coords[0], [0.0, 0.0, 0.0])
        np.testing.assert_array_equal(picked.coords[1], [1.0, 1.0, 0.0])

    def test_m_equals_n_exhausts_cloud(self):
        rng = np.random.default_rng(0)
        cloud = random_cloud(rng, 17)
        picked = geo.farthest_point_sample(cloud, 17)
        assert sorted(picked.indices.tolist()) == list(range(17))

    def test_m_larger_than_n_rejected(self):
        with pytest.raises(ValueError):
            geo.farthest_point_sample(geo.PointCloud(np.eye(3)), 4)

    def test_duplicate_points_still_give_distinct_indices(self):
        points = np.zeros((6, 3))
        points[3:] = 1.0
        picked = geo.farthest_point_sample(geo.PointCloud(points), 4)
        assert len(set(picked.indices.tolist())) == 4

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_exhaustive_greedy(self, seed):
        rng = np.random.default_rng(2000 + seed)
        n = int(rng.integers(2, 120))
        cloud = random_cloud(rng, n, duplicates=bool(seed % 3 == 0))
        m = int(rng.integers(1, n + 1))
        picked = geo.farthest_point_sample(cloud, m)
        np.testing.assert_array_equal(picked.indices, fps_exhaustive(cloud.points, m))

    @pytest.mark.parametrize("seed", range(10))
    def test_coverage_radius_equals_next_gain(self, seed):
        # after M picks, the farthest remaining point defines the coverage
        # radius, and it is exactly the point the next step would select
        rng = np.random.default_rng(3000 + seed)
        cloud = random_cloud(rng, 64)
        m = 8
        picked = geo.farthest_point_sample(cloud, m + 1)
        centroids = cloud.points[picked.indices[:m]]
        d = ((cloud.points[:, None, :] - centroids[None, :, :]) ** 2).sum(-1).min(axis=1)
        gain = ((cloud.points[picked.indices[m]] - centroids) ** 2).sum(-1).min()
        assert np.isclose(d.max(), gain, rtol=0, atol=0)
        assert (d <= gain + 1e-15).all()


class TestKnnSearch:
    def test_k_equals_n_sorts_cloud(self):
        rng = np.random.default_rng(1)
        cloud = random_cloud(rng, 40)
        q = rng.uniform(-1, 1, 3)
        got = geo.knn_search(cloud, q, 40)
        np.testing.assert_array_equal(got, knn_exhaustive(cloud.points, q, 40))

    def test_query_on_a_cloud_point_returns_it_first(self):
        rng = np.random.default_rng(2)
        cloud = random_cloud(rng, 25)
        got = geo.knn_search(cloud, cloud.points[7], 3)
        assert got[0] == 7

    def test_k_out_of_range(self):
        cloud = geo.PointCloud(np.eye(3))
        with pytest.raises(ValueError):
            geo.knn_search(cloud, [0.0, 0.0, 0.0], 4)
        with pytest.raises(ValueError):
            geo.knn_search(cloud, [0.0, 0.0, 0.0], 0)

    @pytest.mark.parametrize("seed", range(60))
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(4000 + seed)
        n = int(rng.integers(1, 257))
        cloud = random_cloud(rng, n, duplicates=bool(seed % 2))
        k = int(rng.integers(1, n + 1))
        q = rng.uniform(-1.2, 1.2, 3)
        got = geo.knn_search(cloud, q, k)
        np.testing.assert_array_equal(got, geo.brute_force_knn(cloud, q, k))
        np.testing.assert_array_equal(got, knn_exhaustive(cloud.points, q, k))

    def test_brute_force_orders_by_distance(self):
        rng = np.random.default_rng(5)
        cloud = random_cloud(rng, 50)
        q = np.zeros(3)
        idx = geo.brute_force_knn(cloud, q, 50)
        d = ((cloud.points[idx] - q) ** 2).sum(axis=1)
        assert (np.diff(d) >= 0).all()


class TestGroupAreas:
    def test_prefix_nesting(self):
        rng = np.random.default_rng(8)
        cloud = random_cloud(rng, 64)
        centroids = geo.farthest_point_sample(cloud, 6)
        grouping = geo.group_areas(cloud, centroids, geo.ScaleSpec((4, 8, 16)))
        for j in range(6):
            small = grouping.area(j, 0)
            mid = grouping.area(j, 1)
            large = grouping.area(j, 2)
            np.testing.assert_array_equal(mid[: len(small)], small)
            np.testing.assert_array_equal(large[: len(mid)], mid)

    def test_eight_point_cloud_against_brute_force(self):
        rng = np.random.default_rng(9)
        cloud = random_cloud(rng, 8)
        centroids = geo.farthest_point_sample(cloud, 2)
        grouping = geo.group_areas(cloud, centroids, geo.ScaleSpec((2, 4)))
        for j in range(2):
            for t, k in enumerate((2, 4)):
                expect = knn_exhaustive(cloud.points, centroids.coords[j], k)
                np.testing.assert_array_equal(grouping.area(j, t), expect)

    def test_scale_exceeding_cloud_rejected(self):
        cloud = geo.PointCloud(np.eye(3))
        centroids = geo.farthest_point_sample(cloud, 1)
        with pytest.raises(ValueError):
            geo.group_areas(cloud, centroids, geo.ScaleSpec((2, 4)))

    def test_k_equals_n_exhausts_cloud(self):
        rng = np.random.default_rng(10)
        cloud = random_cloud(rng, 12)
        centroids = geo.farthest_point_sample(cloud, 3)
        grouping = geo.group_areas(cloud, centroids, geo.ScaleSpec((4, 12)))
        for j in range(3):
            assert sorted(grouping.area(j, 1).tolist()) == list(range(12))


class TestToRelative:
    def test_example(self):
        out = geo.to_relative(np.array([[1.0, 2.0, 3.0]]), np.array([1.0, 0.0, 0.0]))
        np.testing.assert_array_equal(out, [[0.0, 2.0, 3.0]])

    def test_zero_centroid_is_identity(self):
        points = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(geo.to_relative(points, np.zeros(3)), points)

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip_exact(self, seed):
        rng = np.random.default_rng(seed)
        points = rng.uniform(-1, 1, (10, 3))
        c = rng.uniform(-1, 1, 3)
        np.testing.assert_array_equal(geo.to_relative(points, c) + c, points)


class TestPermutationInvariance:
    @pytest.mark.parametrize("seed", range(20))
    def test_pipeline_through_grouping(self, seed):
        rng = np.random.default_rng(6000 + seed)
        n = int(rng.integers(16, 128))
        base = geo.normalize_unit_ball(random_cloud(rng, n))
        perm = rng.permutation(n)
        shuffled = geo.PointCloud(base.points[perm])

        m, scales = 5, geo.ScaleSpec((3, 7))
        cent_a = geo.farthest_point_sample(base, m)
        cent_b = geo.farthest_point_sample(shuffled, m)
        np.testing.assert_array_equal(cent_a.coords, cent_b.coords)

        group_a = geo.group_areas(base, cent_a, scales)
        group_b = geo.group_areas(shuffled, cent_b, scales)
        for j in range(m):
            for t in range(len(scales)):
                coords_a = base.points[group_a.area(j, t)]
                coords_b = shuffled.points[group_b.area(j, t)]
                np.testing.assert_array_equal(coords_a, coords_b)

    @pytest.mark.parametrize("seed", range(10))
    def test_normalization_is_permutation_equivariant(self, seed):
        rng = np.random.default_rng(7000 + seed)
        n = int(rng.integers(4, 100))
        points = rng.uniform(-5, 5, (n, 3))
        perm = rng.permutation(n)
        a = geo.normalize_unit_ball(geo.PointCloud(points)).points
        b = geo.normalize_unit_ball(geo.PointCloud(points[perm])).points
        np.testing.assert_array_equal(a[perm], b)
