import math
import unittest

import numpy as np
from scipy.spatial import cKDTree

from glrdenoise.core import DenoiseConfig, PointCloud
from glrdenoise.exceptions import DimensionMismatchError, InvalidGraphError, NeighborCountError
from glrdenoise.graph import (
    SparseSymmetricMatrix,
    assemble_point_laplacian,
    build_patch_graph,
    build_subgraph_laplacian,
    build_vector_graph,
    degrees,
    dimension_estimate,
    edge_weight,
    epsilon_from_distances,
    gershgorin_bound,
    normalize_laplacian,
    normalized_dimension_estimate,
    patch_knn_edges,
    quadratic_form,
)
from glrdenoise.patchdist import Correspondence, Direction
from glrdenoise.solver import build_iteration_graph
from tests.fixtures import (
    ball_points,
    brute_knn,
    dense_laplacian,
    line_points,
    plane_points,
    random_links,
    rng,
    sampling_matrix,
    sphere_points,
)


def replacement(source, target):
    return Correspondence(source, (target,), (1.0,), Direction.FORWARD, source, (target,))


def matched_epsilon(points, factor=2.0):
    distances, _ = cKDTree(points).query(points, k=2)
    return factor * float(distances[:, 1].mean())


class TestPatchKnnEdges(unittest.TestCase):

    def test_two_centers(self):
        self.assertEqual(patch_knn_edges([[0, 0, 0], [1.0, 0, 0]], 1), [(0, 1)])

    def test_collinear_centers(self):
        centers = [[float(x), 0, 0] for x in range(4)]
        self.assertEqual(patch_knn_edges(centers, 1), [(0, 1), (1, 2), (2, 3)])

    def test_matches_brute_force_union(self):
        centers = rng(1).uniform(size=(100, 3))
        expected = set()
        for m in range(100):
            nearest, _ = brute_knn(centers, centers[m], 17)
            for n in [i for i in nearest if i != m][:16]:
                expected.add((min(m, n), max(m, n)))
        self.assertEqual(patch_knn_edges(centers, 16), sorted(expected))

    def test_too_many_neighbors(self):
        with self.assertRaises(NeighborCountError):
            patch_knn_edges([[0, 0, 0], [1.0, 0, 0]], 2)


class TestWeights(unittest.TestCase):

    def test_epsilon_fallbacks(self):
        self.assertAlmostEqual(epsilon_from_distances([0.3, 0.3, 0.3]), 0.3, places=15)
        self.assertEqual(epsilon_from_distances([0.0, 0.0]), 1.0)

    def test_epsilon_from_spread(self):
        """d^2 in {0, 2} has population std 1"""
        self.assertAlmostEqual(epsilon_from_distances([0.0, math.sqrt(2.0)]), 0.5, places=12)

    def test_edge_weight_examples(self):
        self.assertEqual(edge_weight(0.5, 1.0, 0.5, 1.0, 1.0), 0.0)
        self.assertEqual(edge_weight(0.0, 1.0, None, 1.0, 1.0, 0.5), 1.0)
        self.assertAlmostEqual(edge_weight(0.7, 0.7, math.inf, 1.0, 1.0), math.exp(-0.5), places=12)

    def test_degree_normalization(self):
        self.assertAlmostEqual(edge_weight(0.0, 1.0, None, 2.0, 2.0, 0.5), 0.5, places=15)
        self.assertAlmostEqual(edge_weight(0.0, 1.0, None, 2.0, 2.0, 1.0), 1.0 / 4.0, places=15)

    def test_inverse_gamma_normalization(self):
        self.assertAlmostEqual(edge_weight(0.0, 1.0, None, 2.0, 2.0, 0.5, "inverse_gamma"), 1.0 / 16.0, places=15)
        self.assertAlmostEqual(edge_weight(0.0, 1.0, None, 2.0, 2.0, 1.0, "inverse_gamma"), 1.0 / 4.0, places=15)
        with self.assertRaises(InvalidGraphError):
            edge_weight(0.0, 1.0, None, 2.0, 2.0, 0.5, "squared")

    def test_invalid_weight_arguments(self):
        with self.assertRaises(InvalidGraphError):
            edge_weight(0.1, 0.0, None, 1.0, 1.0)
        with self.assertRaises(InvalidGraphError):
            edge_weight(0.1, 1.0, None, 0.0, 1.0)

    def test_degrees_include_self_term(self):
        rho = degrees(np.array([[0, 1], [1, 2]]), np.array([0.5, 0.25]), 4)
        np.testing.assert_allclose(rho, [1.5, 1.75, 1.25, 1.0])


class TestSubgraphLaplacian(unittest.TestCase):

    def test_single_replacement_pair(self):
        L = build_subgraph_laplacian([replacement(0, 1)], 0.3, 2)
        np.testing.assert_allclose(L.to_dense(), [[0.3, -0.3], [-0.3, 0.3]])

    def test_empty(self):
        L = build_subgraph_laplacian([], 0.3, 4)
        np.testing.assert_array_equal(L.to_dense(), np.zeros((4, 4)))

    def test_equidistant_interpolation(self):
        pair = Correspondence(0, (1, 2, 3), (1 / 3, 1 / 3, 1 / 3), Direction.FORWARD, 0, (1, 2, 3))
        L = build_subgraph_laplacian([pair], 0.9, 4).to_dense()
        np.testing.assert_allclose(L[0, 1:], [-0.3, -0.3, -0.3])
        self.assertAlmostEqual(L[0, 0], 0.9)

    def test_out_of_range(self):
        with self.assertRaises(InvalidGraphError):
            build_subgraph_laplacian([replacement(0, 5)], 1.0, 4)


class TestAssembly(unittest.TestCase):

    def test_identity_map(self):
        L = build_subgraph_laplacian([replacement(0, 2), replacement(1, 3)], 0.5, 4)
        assembled = assemble_point_laplacian([(L, [0, 1, 2, 3])], 4)
        np.testing.assert_array_equal(assembled.to_dense(), L.to_dense())

    def test_disjoint_blocks(self):
        L1 = build_subgraph_laplacian([replacement(0, 1)], 1.0, 2)
        L2 = build_subgraph_laplacian([replacement(0, 1)], 2.0, 2)
        assembled = assemble_point_laplacian([(L1, [0, 1]), (L2, [2, 3])], 4).to_dense()
        np.testing.assert_array_equal(assembled[:2, 2:], np.zeros((2, 2)))
        np.testing.assert_array_equal(assembled[2:, 2:], L2.to_dense())

    def test_matches_dense_oracle(self):
        """Five patches of k=3 over 15 stacked slots"""
        gen = rng(2)
        total = 15
        expected = np.zeros((total, total))
        subgraphs = []
        for e, (m, n) in enumerate([(0, 1), (1, 2), (0, 3), (3, 4), (2, 4)]):
            a, b, w = random_links(6, 5, seed=e)
            L = SparseSymmetricMatrix.laplacian_from_links(6, a, b, w * gen.uniform())
            index_map = np.concatenate([np.arange(3 * m, 3 * m + 3), np.arange(3 * n, 3 * n + 3)])
            S = sampling_matrix(index_map, total)
            expected += S.T @ L.to_dense() @ S
            subgraphs.append((L, index_map))
        np.testing.assert_allclose(assemble_point_laplacian(subgraphs, total).to_dense(), expected, atol=1e-14)

    def test_collision_rejected(self):
        L = build_subgraph_laplacian([replacement(0, 1)], 1.0, 2)
        with self.assertRaises(InvalidGraphError):
            assemble_point_laplacian([(L, [3, 3])], 4)


class TestQuadraticForm(unittest.TestCase):

    def test_constant_signal(self):
        a, b, w = random_links(10, 30, seed=3)
        L = SparseSymmetricMatrix.laplacian_from_links(10, a, b, w)
        self.assertAlmostEqual(quadratic_form(L, np.full(10, 4.2)), 0.0, places=12)

    def test_single_edge(self):
        L = SparseSymmetricMatrix.laplacian_from_links(2, [0], [1], [1.0])
        self.assertEqual(quadratic_form(L, [0.0, 1.0]), 1.0)

    def test_matches_edge_sum(self):
        a, b, w = random_links(30, 80, seed=4)
        f = rng(5).normal(size=30)
        L = SparseSymmetricMatrix.laplacian_from_links(30, a, b, w)
        expected = float(np.sum(w * (f[a] - f[b]) ** 2))
        self.assertAlmostEqual(quadratic_form(L, f), expected, delta=1e-12 * expected)

    def test_length_mismatch(self):
        L = SparseSymmetricMatrix.laplacian_from_links(3, [0], [1], [1.0])
        with self.assertRaises(DimensionMismatchError):
            quadratic_form(L, [1.0, 2.0])


class TestDimensionEstimate(unittest.TestCase):

    def test_single_edge(self):
        vectors = np.array([[0, 0, 0, 1.0, 0, 0], [0, 0, 1.0, 1.0, 2.0, 0]])
        graph = build_vector_graph(vectors, epsilon=1.5)
        w = float(graph.weights[0])
        self.assertAlmostEqual(dimension_estimate(graph.patch_laplacian(), vectors), w * 5.0, places=12)

    def test_identical_patches(self):
        vectors = np.tile([0.1, 0.2, 0.3, 0.4, 0.5, 0.6], (4, 1))
        graph = build_vector_graph(vectors)
        self.assertAlmostEqual(dimension_estimate(graph.patch_laplacian(), vectors), 0.0, places=12)

    def test_list_of_coordinate_vectors(self):
        L = SparseSymmetricMatrix.laplacian_from_links(3, [0, 1], [1, 2], [1.0, 2.0])
        coords = [[0.0, 1.0, 1.0], [0.0, 0.0, 2.0]]
        self.assertAlmostEqual(dimension_estimate(L, coords), 1.0 + (0.0 + 2.0 * 4.0), places=12)
        with self.assertRaises(DimensionMismatchError):
            dimension_estimate(L, [[0.0, 1.0]])

    def test_edge_sum_identity(self):
        """sum_i alpha_i^T L alpha_i = sum w_mn ||p_m - p_n||^2 on random patch vector graphs"""
        gen = rng(6)
        for _ in range(50):
            count, k = int(gen.integers(2, 41)), int(gen.integers(1, 11))
            vectors = gen.normal(size=(count, 3 * k))
            graph = build_vector_graph(vectors)
            edge_sum = float(np.sum(graph.weights * graph.distances ** 2))
            estimate = dimension_estimate(graph.patch_laplacian(), vectors)
            self.assertLessEqual(abs(estimate - edge_sum), 1e-9 * max(edge_sum, 1e-300))

    def test_intrinsic_dimension_ordering(self):
        """Line below plane below ball for uniform samples with matched epsilon"""
        for seed in range(5):
            estimates = []
            for sampler in (line_points, plane_points, ball_points):
                points = sampler(500, seed=seed)
                epsilon = matched_epsilon(points)
                graph = build_vector_graph(points, epsilon=epsilon)
                estimates.append(normalized_dimension_estimate(graph.patch_laplacian(), points, epsilon))
            self.assertLess(estimates[0], estimates[1], f"seed {seed}: {estimates}")
            self.assertLess(estimates[1], estimates[2], f"seed {seed}: {estimates}")


class TestSpectralBounds(unittest.TestCase):

    def test_single_edge_tight(self):
        L = SparseSymmetricMatrix.laplacian_from_links(2, [0], [1], [1.0])
        lam_bound, cond_bound = gershgorin_bound(L, 1.0)
        self.assertEqual(lam_bound, 2.0)
        self.assertAlmostEqual(float(np.linalg.eigvalsh(L.to_dense()).max()), 2.0, places=12)
        self.assertEqual(cond_bound, 3.0)

    def test_slowest_schedule_bound(self):
        L = SparseSymmetricMatrix.laplacian_from_links(2, [0], [1], [1.0])
        mu = 25.0 * math.expm1(1.0 / 12.0)
        _, cond_bound = gershgorin_bound(L, mu)
        self.assertLessEqual(cond_bound, 1.921)

    def test_random_condition_bound(self):
        a, b, w = random_links(100, 400, seed=7)
        L = SparseSymmetricMatrix.laplacian_from_links(100, a, b, w)
        for mu in (2.173, 10.0, 100.0):
            _, cond_bound = gershgorin_bound(L, mu)
            self.assertLessEqual(np.linalg.cond(L.to_dense() + mu * np.eye(100)), cond_bound * (1 + 1e-12))

    def test_rejects_positive_off_diagonal(self):
        bad = SparseSymmetricMatrix.from_triplets(2, [0, 0, 1, 1], [0, 1, 0, 1], [1.0, 1.0, 1.0, 1.0])
        with self.assertRaises(InvalidGraphError):
            gershgorin_bound(bad, 1.0)

    def test_normalized_laplacian(self):
        L = SparseSymmetricMatrix.laplacian_from_links(4, [0, 1], [1, 2], [2.0, 0.5])
        normalized = normalize_laplacian(L).to_dense()
        np.testing.assert_allclose(np.diag(normalized), [1.0, 1.0, 1.0, 0.0])
        np.testing.assert_allclose(normalized, normalized.T)
        self.assertFalse(normalize_laplacian(L).is_laplacian())


class TestLaplacianStructure(unittest.TestCase):

    def test_random_link_laplacians(self):
        gen = rng(8)
        for i in range(100):
            dimension = int(gen.integers(2, 301))
            a, b, w = random_links(dimension, int(gen.integers(1, 4 * dimension)), seed=100 + i)
            L = SparseSymmetricMatrix.laplacian_from_links(dimension, a, b, w)
            dense = L.to_dense()
            self.assertTrue(L.is_laplacian())
            np.testing.assert_allclose(dense, dense.T)
            self.assertGreaterEqual(float(np.linalg.eigvalsh(dense).min()), -1e-9)
            np.testing.assert_allclose(dense, dense_laplacian(dimension, a, b, w), atol=1e-12)

    def test_invalid_links(self):
        with self.assertRaises(InvalidGraphError):
            SparseSymmetricMatrix.laplacian_from_links(3, [0], [1], [-1.0])
        with self.assertRaises(InvalidGraphError):
            SparseSymmetricMatrix.laplacian_from_links(3, [0], [3], [1.0])


class TestPatchGraph(unittest.TestCase):

    def setUp(self):
        self.built_cloud = PointCloud(sphere_points(240, seed=9) + rng(10).normal(0, 0.02, size=(240, 3)))
        self.built = build_iteration_graph(self.built_cloud, DenoiseConfig(patch_size=8, patch_neighbors=6))
        self.graph = self.built.graph

    def test_weights_positive_and_bounded(self):
        self.assertTrue(np.all(self.graph.weights >= 0))
        self.assertTrue(np.all(self.graph.weights <= 1.0))
        self.assertGreater(self.graph.edge_count, 0)
        self.assertTrue(np.all(self.graph.pairs[:, 0] < self.graph.pairs[:, 1]))

    def test_iteration_laplacian_structure(self):
        L = self.built.laplacian
        dense = L.to_dense()
        self.assertEqual(dense.shape, (self.graph.patch_count * 8,) * 2)
        np.testing.assert_allclose(dense, dense.T, atol=1e-12)
        np.testing.assert_allclose(dense.sum(axis=1), 0.0, atol=1e-10)
        self.assertTrue(np.all(dense - np.diag(np.diag(dense)) <= 0))
        self.assertGreaterEqual(float(np.linalg.eigvalsh(dense).min()), -1e-9)
        self.assertTrue(L.is_laplacian())

    def test_weights_follow_degree_normalization(self):
        edges = self.graph.edge_mask
        rho, pairs = self.graph.rho, self.graph.pairs[edges]
        ratio = self.graph.weights[edges] * np.sqrt(rho[pairs[:, 0]] * rho[pairs[:, 1]])
        psi = np.exp(-self.graph.distances[edges] ** 2 / (2.0 * self.graph.epsilon ** 2))
        np.testing.assert_allclose(ratio, psi, rtol=1e-12)

    def test_inverse_gamma_weights_are_weaker(self):
        strict = build_iteration_graph(self.built_cloud, DenoiseConfig(patch_size=8, patch_neighbors=6,
                                                                       degree_normalization="inverse_gamma"))
        self.assertTrue(np.all(strict.graph.weights <= self.graph.weights + 1e-15))
        self.assertLess(float(strict.laplacian.diagonal().sum()), float(self.built.laplacian.diagonal().sum()))

    def test_neighbor_count_clamp_warns(self):
        coords, ids = self.built.coords[:3], self.built.member_ids[:3]
        with self.assertLogs("glrdenoise.graph", level="WARNING") as logs:
            graph = build_patch_graph(coords, ids, self.built.normals[:3], self.built.centers[:3], 6)
        self.assertEqual(graph.pairs.shape, (3, 2))
        record = logs.records[0]
        self.assertEqual((record.requested, record.effective, record.patches), (6, 2, 3))

    def test_point_laplacian_matches_assembly(self):
        total = self.graph.patch_count * 8
        assembled = assemble_point_laplacian(self.graph.subgraphs(), total)
        L = self.graph.point_laplacian()
        self.assertTrue(L.is_laplacian())
        np.testing.assert_allclose(L.to_dense(), assembled.to_dense(), atol=1e-12)

    def test_same_graph_from_batched_builder(self):
        again = build_patch_graph(self.built.coords, self.built.member_ids, self.built.normals,
                                  self.built.centers, 6, workers=3)
        np.testing.assert_array_equal(again.weights, self.graph.weights)
        np.testing.assert_array_equal(again.pairs, self.graph.pairs)


if __name__ == '__main__':
    unittest.main()
