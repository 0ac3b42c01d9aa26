"""
test_acceptance.py - Efficacy runs on synthetic shapes

The desk-scale classes always run. Set GLR_SLOW_TESTS=1 for the full-size runs; each
takes up to a couple of minutes single-threaded.
"""

import os
import time
import unittest

import numpy as np

from glrdenoise.core import DenoiseConfig
from glrdenoise.evaluation import mse
from glrdenoise.graph import normalize_laplacian
from glrdenoise.solver import build_iteration_graph, denoise
from tests.fixtures import cube_surface_points, noisy, plane_points, sphere_points

SLOW = os.environ.get("GLR_SLOW_TESTS", "").strip() == "1"
EFFICACY_RATIO = 0.70
NORMALIZED_PENALTY = 1.5


class TestDeskEfficacy(unittest.TestCase):

    def test_plane(self):
        clean, noisy_plane = noisy(plane_points(1200, seed=22), 0.02, seed=23)
        output, report = denoise(noisy_plane, DenoiseConfig(sigma_level=0.02, max_iterations=8))
        self.assertLessEqual(mse(clean, output), EFFICACY_RATIO * mse(clean, noisy_plane))
        self.assertTrue(all(r.pcg_converged for r in report.per_iteration))

    def test_patch_weights_not_negligible(self):
        """Slot degrees summed per point stay above 1 against a first mu of about 7"""
        _, noisy_plane = noisy(plane_points(1200, seed=22), 0.02, seed=23)
        built = build_iteration_graph(noisy_plane, DenoiseConfig(sigma_level=0.02))
        slot_degree = built.laplacian.diagonal()
        point_degree = np.bincount(built.member_ids.ravel(), weights=slot_degree, minlength=noisy_plane.count)
        self.assertGreater(float(np.median(point_degree)), 1.0)


class TestNormalizedLaplacianConstantSignal(unittest.TestCase):

    def setUp(self):
        _, cloud = noisy(plane_points(600, seed=24), 0.02, seed=25)
        self.built = build_iteration_graph(cloud, DenoiseConfig(patch_size=10, patch_neighbors=8))

    def test_constant_signal(self):
        """The combinatorial L_p leaves a constant signal free, the normalized one penalizes it"""
        ones = np.ones(self.built.laplacian.dimension)
        combinatorial = self.built.laplacian.matrix @ ones
        normalized = normalize_laplacian(self.built.laplacian).matrix @ ones
        np.testing.assert_allclose(combinatorial, 0.0, atol=1e-10)
        self.assertGreater(float(ones @ normalized), 1e-6)


@unittest.skipUnless(SLOW, "set GLR_SLOW_TESTS=1 for full-size efficacy runs")
class TestEfficacy(unittest.TestCase):

    def check_shape(self, points):
        clean, noisy_cloud = noisy(points, 0.02, seed=21)
        started = time.perf_counter()
        output, report = denoise(noisy_cloud, DenoiseConfig(sigma_level=0.02), workers=1)
        elapsed = time.perf_counter() - started

        self.assertLessEqual(mse(clean, output), EFFICACY_RATIO * mse(clean, noisy_cloud))
        for record in report.per_iteration:
            self.assertLessEqual(record.objective_after,
                                 record.objective_before + 1e-9 * max(1.0, abs(record.objective_before)))
        self.assertLess(elapsed, 120.0)

    def test_cube_surface(self):
        self.check_shape(cube_surface_points(10000, seed=20))

    def test_sphere(self):
        self.check_shape(sphere_points(10000, seed=20))

    def test_plane(self):
        clean, noisy_plane = noisy(plane_points(2000, seed=22), 0.02, seed=23)
        output, _ = denoise(noisy_plane, DenoiseConfig(sigma_level=0.02))
        self.assertLessEqual(mse(clean, output), EFFICACY_RATIO * mse(clean, noisy_plane))


@unittest.skipUnless(SLOW, "set GLR_SLOW_TESTS=1 for full-size efficacy runs")
class TestNormalizedLaplacianControl(unittest.TestCase):

    def test_flat_plane_penalty(self):
        """The normalized Laplacian does not keep a constant signal, so a flat plane fares worse."""
        clean, noisy_plane = noisy(plane_points(2000, seed=24), 0.02, seed=25)
        combinatorial, _ = denoise(noisy_plane, DenoiseConfig(sigma_level=0.02))
        normalized, _ = denoise(noisy_plane, DenoiseConfig(sigma_level=0.02, normalized_laplacian=True))
        self.assertGreaterEqual(mse(clean, normalized), NORMALIZED_PENALTY * mse(clean, combinatorial))


if __name__ == '__main__':
    unittest.main()
