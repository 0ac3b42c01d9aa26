import contextlib
import csv
import io
import os
import shutil
import tempfile
import unittest
from unittest import mock

import numpy as np

from glrdenoise.cli import run_command
from glrdenoise.config import EVAL_COLUMNS, GRAPH_COLUMNS, REPORT_COLUMNS
from glrdenoise.core import PointCloud
from glrdenoise.utils.cloud_io import read_cloud, write_cloud
from tests.fixtures import plane_points, sphere_points

SMALL_FLAGS = ["--k", "10", "--patch-neighbors", "8"]


class TestCommandLine(unittest.TestCase):

    def setUp(self):
        self.workdir = tempfile.mkdtemp(prefix="glr_cli_")

    def tearDown(self):
        shutil.rmtree(self.workdir, ignore_errors=True)

    def path(self, name):
        return os.path.join(self.workdir, name)

    def run_cli(self, *argv):
        with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
            return run_command(list(argv))

    def save(self, name, points):
        write_cloud(PointCloud(points), self.path(name))
        return self.path(name)

    def read_rows(self, name):
        with open(self.path(name), newline="", encoding="utf-8") as fid:
            return list(csv.DictReader(line for line in fid if not line.startswith("#")))

    def test_eval_identical_clouds(self):
        cloud = self.save("truth.ply", sphere_points(50, seed=1))
        self.assertEqual(self.run_cli("eval", "--truth", cloud, "--estimate", cloud, "--csv", self.path("m.csv")), 0)
        rows = self.read_rows("m.csv")
        self.assertEqual(len(rows), 1)
        self.assertEqual(list(rows[0].keys()), EVAL_COLUMNS)
        self.assertEqual(float(rows[0]["mse"]), 0.0)
        self.assertEqual(float(rows[0]["mcd"]), 0.0)
        self.assertEqual(rows[0]["snr_db"], "inf")

    def test_eval_appends_below_one_header(self):
        cloud = self.save("truth.xyz", sphere_points(30, seed=2))
        for _ in range(2):
            self.run_cli("eval", "--truth", cloud, "--estimate", cloud, "--csv", self.path("m.csv"), "--sigma", "0.02")
        rows = self.read_rows("m.csv")
        self.assertEqual(len(rows), 2)
        self.assertEqual(rows[1]["sigma"], "0.02")

    def test_zero_iterations_copy_input(self):
        source = self.save("in.ply", sphere_points(120, seed=3))
        self.assertEqual(self.run_cli("denoise", "--in", source, "--out", self.path("out.ply"), "--max-iters", "0"), 0)
        np.testing.assert_array_equal(read_cloud(self.path("out.ply")).points, read_cloud(source).points)

    def test_usage_errors_exit_two(self):
        self.assertEqual(self.run_cli("denoise", "--in", "a.ply", "--out", "b.ply", "--bogus"), 2)
        self.assertEqual(self.run_cli("add-noise", "--in", "a.ply", "--out", "b.ply"), 2)
        self.assertEqual(self.run_cli("denoise", "--in", "a.ply", "--out", "b.ply", "--schedule-r", "0"), 2)

    def test_missing_input_exits_one(self):
        self.assertEqual(self.run_cli("denoise", "--in", self.path("absent.ply"), "--out", self.path("o.ply")), 1)

    def test_unexpected_error_exits_one(self):
        source = self.save("in.ply", sphere_points(50, seed=11))
        stderr = io.StringIO()
        with mock.patch("glrdenoise.cli.denoise", side_effect=RuntimeError("solver exploded")):
            with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(stderr):
                code = run_command(["denoise", "--in", source, "--out", self.path("o.ply")])
        self.assertEqual(code, 1)
        self.assertIn("RuntimeError: solver exploded", stderr.getvalue())
        self.assertFalse(os.path.exists(self.path("o.ply")))

    def test_seed_switches_center_selection(self):
        source = self.save("in.ply", sphere_points(300, seed=12))
        for name, extra in (("plain.csv", []), ("seeded.csv", ["--seed", "3"])):
            self.assertEqual(self.run_cli("denoise", "--in", source, "--out", self.path("o.ply"), "--max-iters", "1",
                                          "--report", self.path(name), *SMALL_FLAGS, *extra), 0)
        with open(self.path("plain.csv"), encoding="utf-8") as fid:
            plain = [line.strip() for line in fid if line.startswith("#")]
        with open(self.path("seeded.csv"), encoding="utf-8") as fid:
            seeded = [line.strip() for line in fid if line.startswith("#")]
        self.assertIn("# seed_strategy: first_index", plain)
        self.assertIn("# seed_strategy: seeded", seeded)
        self.assertIn("# rng_seed: 3", seeded)

    def test_noise_then_denoise_lowers_error(self):
        clean = self.save("clean.ply", plane_points(800, seed=4))
        self.assertEqual(self.run_cli("add-noise", "--in", clean, "--out", self.path("noisy.ply"),
                                      "--sigma", "0.02", "--seed", "5"), 0)
        self.assertEqual(self.run_cli("denoise", "--in", self.path("noisy.ply"), "--out", self.path("clean_est.ply"),
                                      "--sigma", "0.02", "--max-iters", "4"), 0)
        for estimate in ("noisy.ply", "clean_est.ply"):
            self.run_cli("eval", "--truth", clean, "--estimate", self.path(estimate), "--csv", self.path("m.csv"))
        before, after = self.read_rows("m.csv")
        self.assertLess(float(after["mse"]), float(before["mse"]))

    def test_output_independent_of_thread_count(self):
        source = self.save("in.ply", sphere_points(300, seed=6))
        outputs = []
        for threads in ("1", "8"):
            target = self.path(f"out_{threads}.ply")
            with mock.patch.dict(os.environ, {"GLR_THREADS": threads}):
                self.run_cli("denoise", "--in", source, "--out", target, "--max-iters", "2", *SMALL_FLAGS)
            with open(target, "rb") as fid:
                outputs.append(fid.read())
        self.assertEqual(outputs[0], outputs[1])

    def test_report_echoes_configuration(self):
        source = self.save("in.ply", sphere_points(300, seed=7))
        self.run_cli("denoise", "--in", source, "--out", self.path("o.ply"), "--sigma", "0.02", "--max-iters", "2",
                     "--report", self.path("report.csv"), *SMALL_FLAGS)
        with open(self.path("report.csv"), encoding="utf-8") as fid:
            comments = [line.strip() for line in fid if line.startswith("#")]
        self.assertIn("# effective_schedule_r: 4", comments)
        self.assertIn("# patch_size: 10", comments)
        rows = self.read_rows("report.csv")
        self.assertEqual(list(rows[0].keys()), REPORT_COLUMNS)
        self.assertEqual([int(r["iteration"]) for r in rows], list(range(1, len(rows) + 1)))

    def test_flags_override_yaml(self):
        source = self.save("in.ply", sphere_points(300, seed=8))
        with open(self.path("run.yaml"), "w", encoding="utf-8") as fid:
            fid.write("patch_size: 10\npatch_neighbors: 8\nmax_iterations: 0\n")
        self.run_cli("denoise", "--in", source, "--out", self.path("o.ply"), "--config", self.path("run.yaml"),
                     "--max-iters", "1", "--report", self.path("report.csv"))
        self.assertEqual(len(self.read_rows("report.csv")), 1)

    def test_unknown_yaml_key_exits_one(self):
        source = self.save("in.ply", sphere_points(50, seed=9))
        with open(self.path("run.yaml"), "w", encoding="utf-8") as fid:
            fid.write("patch_sise: 10\n")
        self.assertEqual(self.run_cli("denoise", "--in", source, "--out", self.path("o.ply"),
                                      "--config", self.path("run.yaml")), 1)

    def test_graph_info_dump(self):
        source = self.save("in.ply", sphere_points(240, seed=10))
        self.assertEqual(self.run_cli("graph-info", "--in", source, "--dump", self.path("edges.csv"), *SMALL_FLAGS), 0)
        rows = self.read_rows("edges.csv")
        self.assertGreater(len(rows), 0)
        self.assertEqual(list(rows[0].keys()), GRAPH_COLUMNS)
        for row in rows:
            self.assertNotEqual(row["m"], row["n"])
            self.assertGreaterEqual(float(row["d_mn"]), 0.0)
            self.assertTrue(0.0 <= float(row["w_mn"]) <= 1.0)


if __name__ == '__main__':
    unittest.main()
