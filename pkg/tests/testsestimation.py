import math
import unittest

import numpy as np

from uwbslam.config import EstimatorConfig, ParameterError, SearchConfig
from uwbslam.estimation import (InsufficientExcitationError, RangingWindow, coarse_search, count_local_minima,
                                estimate_relative_pose, local_minima, near_collinear_window, refine, residual,
                                residual_grid)
from uwbslam.geometry import Pose2, between, chi2_quantile, compose
from uwbslam.scenario import RangingMeasurement, Trajectory
from uwbslam.utils import OpTimings

RATE = 50.0


def _paths(n, mirror=False):
    t = np.arange(n) / RATE
    alpha = np.column_stack([t, 0.4 * np.sin(3 * t), 0.8 * t])
    beta = np.column_stack([4 + 0.5 * np.cos(2 * t), 2 + 0.7 * t, -0.5 + 1.2 * t])
    if mirror:
        alpha[:, 1:] *= -1
        beta[:, 1:] *= -1
    return t, alpha, beta


def _window(n=50, sigma=0.0, seed=0, mirror=False):
    t, alpha, beta = _paths(n, mirror)
    ranges = np.hypot(*(alpha[:, :2] - beta[:, :2]).T)
    if sigma:
        ranges = np.abs(ranges + np.random.default_rng(seed).normal(0, sigma, n))
    truth = between(Pose2(*alpha[-1]), Pose2(*beta[-1]))
    return RangingWindow.from_poses(0, 1, t, alpha, beta, ranges), truth


def _trans_error(a: Pose2, b: Pose2) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def _slow_residual(candidate: Pose2, window: RangingWindow) -> float:
    total = 0.0
    for rel_a, rel_b, r in zip(window.rel_alpha, window.rel_beta, window.ranges):
        b = compose(candidate, Pose2(*rel_b))
        total += (r - math.sqrt((rel_a[0] - b.x) ** 2 + (rel_a[1] - b.y) ** 2)) ** 2
    return total


class RangingWindowTest(unittest.TestCase):
    def test_last_entry_is_identity(self):
        window, _ = _window(20)
        self.assertEqual(len(window), 20)
        self.assertTrue(np.all(window.rel_alpha[-1] == 0))
        self.assertTrue(np.all(window.rel_beta[-1] == 0))
        self.assertEqual(window.t, 19 / RATE)

    def test_arrays_are_read_only(self):
        window, _ = _window(5)
        with self.assertRaises(ValueError):
            window.ranges[0] = 1.0

    def test_invalid_windows(self):
        with self.assertRaises(ParameterError):
            RangingWindow.from_poses(0, 1, [], np.zeros((0, 3)), np.zeros((0, 3)), [])
        with self.assertRaises(ParameterError):
            RangingWindow.from_poses(0, 1, [0.0, 1.0], np.zeros((2, 3)), np.zeros((1, 3)), [1.0, 1.0])
        with self.assertRaises(ParameterError):
            RangingWindow.from_poses(0, 1, [1.0, 0.0], np.zeros((2, 3)), np.zeros((2, 3)), [1.0, 1.0])
        with self.assertRaises(ParameterError):
            RangingWindow.from_streams(Trajectory(), Trajectory(), [])

    def test_from_streams_interpolates_odometry(self):
        t, alpha, beta = _paths(11)
        odom_a, odom_b = Trajectory.from_arrays(t, alpha), Trajectory.from_arrays(t, beta)
        samples = [RangingMeasurement(float(ti), 0, 1, 2.0) for ti in t[2:9]]
        window = RangingWindow.from_streams(odom_a, odom_b, samples)
        self.assertEqual((window.source, window.target), (0, 1))
        self.assertEqual(len(window), 7)
        expected = between(Pose2(*alpha[8]), Pose2(*alpha[2]))
        self.assertTrue(Pose2(*window.rel_alpha[0]).almost_equal(expected, 1e-9))


class ResidualTest(unittest.TestCase):
    def test_zero_at_truth(self):
        window, truth = _window()
        self.assertAlmostEqual(residual(truth, window), 0.0, delta=1e-9)

    def test_single_entry_circle(self):
        window = RangingWindow.from_poses(0, 1, [0.0], [(0, 0, 0)], [(5, 5, 1)], [2.5])
        self.assertAlmostEqual(residual(Pose2(1.5, -2.0, 0.7), window), 0.0, delta=1e-12)
        self.assertAlmostEqual(residual(Pose2(0.0, 0.0, 0.0), window), 6.25, delta=1e-12)

    def test_matches_straightforward_loop(self):
        window, _ = _window(30, sigma=0.1, seed=3)
        rng = np.random.default_rng(4)
        for _ in range(25):
            candidate = Pose2(*rng.uniform(-6, 6, 2), rng.uniform(-math.pi, math.pi))
            self.assertAlmostEqual(residual(candidate, window), _slow_residual(candidate, window), delta=1e-10)


class CoarseSearchTest(unittest.TestCase):
    def test_early_abort_matches_exhaustive(self):
        cfg = SearchConfig(delta=0.1)
        for seed in range(100):
            window, _ = _window(50, sigma=0.1, seed=seed)
            fast = coarse_search(window, cfg, early_abort=True)
            full = coarse_search(window, cfg, early_abort=False)
            self.assertEqual(fast.index, full.index, msg=f"seed {seed}")
            self.assertEqual(fast.residual, full.residual)
            self.assertEqual(fast.pose, full.pose)
            self.assertLessEqual(fast.evaluated, full.evaluated)

    def test_grid_size(self):
        window, _ = _window(12)
        cfg = SearchConfig(delta=0.1)
        self.assertEqual(cfg.w, 32)
        self.assertEqual(coarse_search(window, cfg, early_abort=False).evaluated, 4225 * 12)
        phis, thetas, grid = residual_grid(window, cfg)
        self.assertEqual(grid.shape, (65, 65))
        self.assertEqual(len(phis), 65)
        self.assertEqual(len(thetas), 65)

    def test_zero_noise_within_grid_resolution(self):
        cfg = SearchConfig(delta=0.1)
        window, truth = _window()
        found = coarse_search(window, cfg)
        self.assertLessEqual(_trans_error(found.pose, truth), cfg.delta * window.latest_range)
        self.assertLessEqual(abs(between(found.pose, truth).theta), cfg.delta)

    def test_grid_minimum_is_search_result(self):
        cfg = SearchConfig(delta=0.2)
        window, _ = _window(25, sigma=0.05, seed=1)
        _, _, grid = residual_grid(window, cfg)
        found = coarse_search(window, cfg)
        i_phi, i_theta = np.unravel_index(int(np.argmin(grid)), grid.shape)
        self.assertEqual(found.index, (i_phi - cfg.w, i_theta - cfg.w))

    def test_near_collinear_landscape_is_multimodal(self):
        window = near_collinear_window(50)
        _, _, grid = residual_grid(window, SearchConfig(delta=0.1))
        minima = local_minima(grid)
        self.assertGreaterEqual(count_local_minima(grid), 2)
        lowest = sorted(minima, key=lambda ij: grid[ij])[:2]
        self.assertGreater(abs(lowest[0][0] - lowest[1][0]), 10)

    def test_local_minima_strict(self):
        grid = np.array([[3.0, 2.0, 3.0], [2.0, 1.0, 2.0], [3.0, 2.0, 0.5]])
        self.assertEqual(local_minima(grid), [(2, 2)])
        self.assertEqual(count_local_minima(np.ones((3, 3))), 0)


class RefineTest(unittest.TestCase):
    def test_fixed_point_at_optimum(self):
        window, truth = _window()
        result = refine(truth, window)
        self.assertTrue(result.pose.almost_equal(truth, 1e-9))
        self.assertTrue(result.converged)
        self.assertLessEqual(result.residual, 1e-12)

    def test_never_increases_cost(self):
        rng = np.random.default_rng(12)
        for trial in range(200):
            window, _ = _window(20, sigma=0.2, seed=trial)
            initial = Pose2(*rng.uniform(-8, 8, 2), rng.uniform(-math.pi, math.pi))
            result = refine(initial, window)
            self.assertLessEqual(result.residual, residual(initial, window) + 1e-12)

    def test_iteration_cap_reports_not_converged(self):
        window, truth = _window(30, sigma=0.05, seed=2)
        result = refine(Pose2(truth.x + 1.0, truth.y - 1.0, truth.theta + 0.5), window, max_iterations=1)
        self.assertEqual(result.iterations, 1)
        self.assertFalse(result.converged)

    def test_refined_beats_coarse_on_noisy_windows(self):
        coarse_err, refined_err = [], []
        for seed in range(20):
            window, truth = _window(50, sigma=0.02, seed=seed)
            coarse_err.append(_trans_error(estimate_relative_pose(window, mode="coarse").pose, truth))
            refined_err.append(_trans_error(estimate_relative_pose(window, mode="combined").pose, truth))
        self.assertLessEqual(np.mean(refined_err), np.mean(coarse_err))


class EstimateRelativePoseTest(unittest.TestCase):
    def test_zero_noise_combined(self):
        window, truth = _window(50)
        lc = estimate_relative_pose(window, SearchConfig(delta=0.1), uid=9)
        self.assertLessEqual(_trans_error(lc.pose, truth), 0.01)
        self.assertLessEqual(math.degrees(abs(between(lc.pose, truth).theta)), 0.1)
        self.assertEqual((lc.uid, lc.source, lc.target, lc.window_size), (9, 0, 1, 50))
        self.assertFalse(lc.degenerate)
        self.assertGreaterEqual(lc.residual, 0.0)
        np.testing.assert_allclose(np.diag(lc.covariance.matrix), [0.25, 0.25, 0.15 ** 2])

    def test_mirrored_trajectories_mirror_the_estimate(self):
        window, _ = _window(50)
        mirrored, _ = _window(50, mirror=True)
        lc = estimate_relative_pose(window)
        lc_mirror = estimate_relative_pose(mirrored)
        self.assertTrue(lc_mirror.pose.almost_equal(Pose2(lc.pose.x, -lc.pose.y, -lc.pose.theta), 1e-6))

    def test_insufficient_excitation(self):
        window, _ = _window(5)
        with self.assertRaises(InsufficientExcitationError) as ctx:
            estimate_relative_pose(window, estimator=EstimatorConfig(min_window=10))
        self.assertEqual(ctx.exception.size, 5)
        self.assertIsNone(ctx.exception.paths)

    def test_short_paths_are_rejected(self):
        n = 50
        t = np.arange(n) / RATE
        # 0.2 m/s for 0.98 s stays below the 0.2 m minimum
        alpha = np.column_stack([0.2 * t, np.zeros(n), np.zeros(n)])
        beta = np.column_stack([3.0 + 0.2 * t, 4.0 + 0.1 * t, np.full(n, 0.3)])
        ranges = np.hypot(*(alpha[:, :2] - beta[:, :2]).T)
        window = RangingWindow.from_poses(0, 1, t, alpha, beta, ranges)
        with self.assertRaises(InsufficientExcitationError) as ctx:
            estimate_relative_pose(window)
        self.assertLess(min(ctx.exception.paths), 0.2)
        self.assertEqual(ctx.exception.min_path, 0.2)
        lc = estimate_relative_pose(window, estimator=EstimatorConfig(min_excitation=0.1))
        self.assertEqual(lc.window_size, n)

    def test_stationary_pair_is_degenerate(self):
        n = 20
        t = np.arange(n) / RATE
        window = RangingWindow.from_poses(0, 1, t, np.zeros((n, 3)), np.tile([3.0, 4.0, 0.0], (n, 1)),
                                          np.full(n, 5.0))
        with self.assertRaises(InsufficientExcitationError):
            estimate_relative_pose(window)
        lc = estimate_relative_pose(window, estimator=EstimatorConfig(min_excitation=0.0))
        self.assertTrue(lc.degenerate)
        self.assertAlmostEqual(math.hypot(lc.pose.x, lc.pose.y), 5.0, places=6)

    def test_mirror_ambiguity_is_flagged(self):
        window = near_collinear_window(50)
        cfg = SearchConfig(delta=0.1)
        lc = estimate_relative_pose(window, cfg)
        self.assertTrue(lc.degenerate)
        found = coarse_search(window, cfg)
        self.assertEqual(lc.pose, found.pose)
        self.assertEqual(lc.residual, found.residual)
        self.assertTrue(estimate_relative_pose(window, cfg, mode="coarse").degenerate)
        self.assertFalse(estimate_relative_pose(window, cfg, mode="nls").degenerate)

        unchecked = estimate_relative_pose(window, cfg, EstimatorConfig(ambiguity_ratio=0.0))
        self.assertFalse(unchecked.degenerate)
        self.assertLessEqual(unchecked.residual, found.residual)

    def test_refined_pose_needs_a_significant_gain(self):
        threshold = chi2_quantile(EstimatorConfig().refine_significance, 3)
        for seed in range(20):
            window, _ = _window(50, sigma=0.1, seed=seed)
            coarse = estimate_relative_pose(window, mode="coarse")
            combined = estimate_relative_pose(window, mode="combined")
            self.assertLessEqual(combined.residual, coarse.residual)
            if combined.pose != coarse.pose:
                gain = coarse.residual - combined.residual
                self.assertGreater(gain, threshold * combined.residual / (len(window) - 3))

    def test_estimation_median_time(self):
        timings = OpTimings()
        cfg = SearchConfig(delta=0.1)
        with timings.activate():
            for seed in range(20):
                window, _ = _window(50, sigma=0.1, seed=seed)
                estimate_relative_pose(window, cfg)
        self.assertEqual(timings.count("estimation"), 20)
        self.assertLess(timings.median_ms("estimation"), 50.0)

    def test_modes(self):
        window, truth = _window(30, sigma=0.01, seed=8)
        coarse = estimate_relative_pose(window, mode="coarse")
        self.assertEqual(coarse.residual, coarse_search(window, SearchConfig()).residual)
        nls = estimate_relative_pose(window, estimator=EstimatorConfig(mode="nls"))
        self.assertLessEqual(nls.residual, residual(Pose2.identity(), window) + 1e-12)


if __name__ == '__main__':
    unittest.main()
