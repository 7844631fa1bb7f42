import math
import unittest

import numpy as np

from uwbslam.config import DpgoConfig, NetConfig, NoiseConfig
from uwbslam.dpgo import (DisconnectedGraphError, Edge, PoseGraph, anchor_gauge, anchored_trajectories,
                          build_local_graph, build_pose_graph, centralized_solve, global_cost, keyframes,
                          local_block_optimize, loop_edge, make_agents, run_dpgo, solve_graph)
from uwbslam.estimation import LoopClosure
from uwbslam.geometry import Covariance3, Pose2, between, compose
from uwbslam.network import SimulatedNetwork
from uwbslam.scenario import Trajectory, generate_trajectories, synthesize_odometry, transform_trajectories

ZERO_NOISE = NoiseConfig(odom_trans_sigma=0.0, odom_rot_sigma=0.0, uwb_sigma=0.0)
PAIRS = ((0, 1), (0, 2), (1, 2))


def _closures(truth, times, noise_sigma=None, seed=0):
    rng = np.random.default_rng(seed)
    cov = Covariance3.from_sigmas(0.5, 0.5, 0.15)
    out = []
    for n, (t, (a, b)) in enumerate((t, pair) for t in times for pair in PAIRS):
        pose = between(truth[a].nearest(t), truth[b].nearest(t))
        if noise_sigma:
            pose = compose(pose, Pose2(*rng.normal(0, noise_sigma)))
        out.append(LoopClosure(uid=n, source=a, target=b, t=float(t), pose=pose, covariance=cov,
                               residual=0.0, window_size=50))
    return out


def _scenario(seed=4, noise=ZERO_NOISE, closure_sigma=None, duration=20.0, truth_pose=None):
    truth = generate_trajectories(3, duration, 0.2, (10.0, 12.0), seed)
    if truth_pose is not None:
        truth = transform_trajectories(truth, truth_pose)
    odometry = synthesize_odometry(truth, noise)
    times = np.arange(1.0, duration - 0.5, 2.0)
    closures = _closures(truth, times, closure_sigma, seed)
    edges = [loop_edge(lc, odometry, noise.odom_rate, noise) for lc in closures]
    return truth, odometry, edges


def _expected(truth, robot, t):
    return between(truth[0].nearest(0.0), truth[robot].nearest(t))


class LocalGraphTest(unittest.TestCase):
    def test_chain_of_ten_samples(self):
        odometry = Trajectory.from_arrays(np.arange(10) / 10.0, [(0.1 * k, 0.0, 0.05 * k) for k in range(10)])
        graph = build_local_graph(0, odometry, noise=ZERO_NOISE)
        self.assertEqual(len(graph), 10)
        self.assertEqual(len(graph.odometry_edges), 9)
        self.assertEqual(graph.loop_edges, [])
        self.assertAlmostEqual(graph.cost(), 0.0, delta=1e-20)

    def test_keyframe_stride(self):
        odometry = Trajectory.from_arrays(np.arange(10) / 10.0, np.zeros((10, 3)))
        frames = keyframes(3, odometry, 10.0, stride=3)
        self.assertEqual([f.key for f in frames], [(3, 0), (3, 1), (3, 2), (3, 3)])
        self.assertEqual([f.index for f in frames], [0, 3, 6, 9])

    def test_chain_only_solve_returns_dead_reckoning(self):
        _, odometry, _ = _scenario()
        graph = build_pose_graph(odometry, (), ZERO_NOISE)
        with self.assertRaises(DisconnectedGraphError):
            centralized_solve(graph)
        single = build_pose_graph({0: odometry[0]}, (), ZERO_NOISE)
        solved, cost = centralized_solve(single)
        self.assertLess(cost, 1e-12)
        for key, pose in single.poses.items():
            self.assertTrue(solved.poses[key].almost_equal(pose, 1e-12))

    def test_graph_residual_zero_at_truth(self):
        truth, odometry, edges = _scenario()
        graph = build_pose_graph(odometry, edges, ZERO_NOISE)
        at_truth = {key: _expected(truth, key[0], key[1] / 10.0) for key in graph.poses}
        self.assertAlmostEqual(graph.cost(at_truth), 0.0, delta=1e-9)

    def test_loop_edge_moves_to_keyframe(self):
        truth, odometry, _ = _scenario()
        t = 3.04
        lc = LoopClosure(uid=5, source=0, target=2, t=t, pose=between(truth[0].nearest(t), truth[2].nearest(t)),
                         covariance=Covariance3.from_sigmas(0.5, 0.5, 0.15), residual=0.0, window_size=50)
        edge = loop_edge(lc, odometry, 10.0, ZERO_NOISE)
        self.assertEqual((edge.i, edge.j, edge.uid, edge.kind), ((0, 30), (2, 30), 5, "loop"))
        self.assertTrue(edge.z.almost_equal(between(truth[0].nearest(3.0), truth[2].nearest(3.0)), 1e-3))


class CentralizedSolveTest(unittest.TestCase):
    def test_noiseless_recovers_truth(self):
        truth, odometry, edges = _scenario()
        solved, cost = centralized_solve(build_pose_graph(odometry, edges, ZERO_NOISE))
        self.assertLess(cost, 1e-9)
        for key, pose in solved.poses.items():
            self.assertTrue(pose.almost_equal(_expected(truth, key[0], key[1] / 10.0), 1e-6), msg=str(key))

    def test_cost_never_increases(self):
        for seed in range(10):
            _, odometry, edges = _scenario(seed, NoiseConfig(rng_seed=seed), closure_sigma=[0.3, 0.3, 0.1])
            graph = build_pose_graph(odometry, edges, NoiseConfig(rng_seed=seed))
            _, cost = centralized_solve(graph)
            self.assertGreaterEqual(cost, 0.0)
            self.assertLessEqual(cost, graph.cost() + 1e-12)

    def test_anchor_stays_identity(self):
        _, odometry, edges = _scenario(7, NoiseConfig(rng_seed=7), closure_sigma=[0.3, 0.3, 0.1])
        solved, _ = centralized_solve(build_pose_graph(odometry, edges, NoiseConfig(rng_seed=7)))
        self.assertEqual(solved.anchor, (0, 0))
        self.assertEqual(solved.poses[(0, 0)], Pose2.identity())

    def test_invariant_to_world_transform(self):
        _, odometry, edges = _scenario(3)
        _, moved_odometry, moved_edges = _scenario(3, truth_pose=Pose2(4.0, -7.0, 1.1))
        a, _ = centralized_solve(build_pose_graph(odometry, edges, ZERO_NOISE))
        b, _ = centralized_solve(build_pose_graph(moved_odometry, moved_edges, ZERO_NOISE))
        for key in a.poses:
            self.assertTrue(a.poses[key].almost_equal(b.poses[key], 1e-9))

    def test_anchor_gauge_idempotent(self):
        graph = PoseGraph({(0, 0): Pose2(1, 2, 0.3), (0, 1): Pose2(2, 2, 0.5), (1, 0): Pose2(-1, 0, 2.0)})
        once = anchor_gauge(graph)
        twice = anchor_gauge(once)
        self.assertEqual(once.poses[(0, 0)], Pose2.identity())
        self.assertEqual(once.anchor, (0, 0))
        for key in graph.poses:
            self.assertTrue(once.poses[key].almost_equal(twice.poses[key], 1e-12))
            self.assertTrue(once.poses[key].almost_equal(between(graph.poses[(0, 0)], graph.poses[key]), 1e-12))


class LocalBlockTest(unittest.TestCase):
    def setUp(self) -> None:
        odom = Edge((1, 0), (1, 1), Pose2(1.0, 0.0, 0.0), np.eye(3))
        loop = Edge((0, 5), (1, 1), Pose2.identity(), 3.0 * np.eye(3), kind="loop", uid=1)
        self.fragment = PoseGraph({(1, 0): Pose2.identity(), (1, 1): Pose2(1.0, 0.0, 0.0)}, [odom, loop],
                                  fixed=[(1, 0)])
        self.separators = {(0, 5): Pose2(2.0, 0.0, 0.0)}

    def test_weighted_average(self):
        updated, step = local_block_optimize(self.fragment, 1, self.separators)
        self.assertTrue(updated.poses[(1, 1)].almost_equal(Pose2(1.75, 0.0, 0.0), 1e-6))
        self.assertEqual(updated.poses[(1, 0)], Pose2.identity())
        self.assertAlmostEqual(step, 0.75, delta=1e-6)

    def test_fixed_point(self):
        updated, _ = local_block_optimize(self.fragment, 1, self.separators)
        _, step = local_block_optimize(updated, 1, self.separators)
        self.assertLess(step, 1e-8)

    def test_missing_separator_drops_the_edge(self):
        updated, step = local_block_optimize(self.fragment, 1, {})
        self.assertTrue(updated.poses[(1, 1)].almost_equal(Pose2(1.0, 0.0, 0.0), 1e-9))
        self.assertLess(step, 1e-8)

    def test_solve_graph_monotone(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            n = int(rng.integers(3, 10))
            poses = {(0, k): Pose2(*rng.normal(0, 2, 3)) for k in range(n)}
            edges = [Edge((0, k), (0, k + 1), Pose2(*rng.normal(0, 1, 3)), np.eye(3)) for k in range(n - 1)]
            edges += [Edge((0, 0), (0, n - 1), Pose2(*rng.normal(0, 1, 3)), np.eye(3), kind="loop", uid=0)]
            result = solve_graph(poses, edges, [(0, k) for k in range(1, n)])
            self.assertLessEqual(result.cost, result.initial_cost + 1e-12)


class DistributedTest(unittest.TestCase):
    def test_zero_noise_converges(self):
        truth, odometry, edges = _scenario()
        agents = make_agents(odometry, edges, ZERO_NOISE)
        statuses = run_dpgo(agents, SimulatedNetwork(), max_rounds=10)
        self.assertTrue(statuses[-1].converged)
        self.assertLess(statuses[-1].cost, 1e-12)
        for robot, traj in anchored_trajectories(agents).items():
            self.assertEqual(len(traj), len(odometry[robot]))
            for t, pose in list(traj.items())[::20]:
                self.assertTrue(pose.almost_equal(_expected(truth, robot, t), 1e-6), msg=f"{robot} {t}")

    def test_matches_centralized_cost(self):
        for seed in range(20):
            noise = NoiseConfig(rng_seed=seed)
            _, odometry, edges = _scenario(seed, noise, closure_sigma=[0.3, 0.3, 0.1])
            _, central = centralized_solve(build_pose_graph(odometry, edges, noise))
            agents = make_agents(odometry, edges, noise)
            run_dpgo(agents, SimulatedNetwork(), DpgoConfig(tolerance=1e-8), max_rounds=500)
            distributed = global_cost(agents)
            self.assertLessEqual(abs(distributed - central), 0.01 * central + 1e-6, msg=f"seed {seed}")

    def test_without_closures_trajectories_are_dead_reckoning(self):
        noise = NoiseConfig(rng_seed=8)
        truth = generate_trajectories(3, 20.0, 0.2, (10.0, 12.0), 8)
        odometry = synthesize_odometry(truth, noise)
        untouched = anchored_trajectories(make_agents(odometry, [], noise))
        agents = make_agents(odometry, [], noise)
        statuses = run_dpgo(agents, SimulatedNetwork(), max_rounds=5)
        self.assertTrue(statuses[-1].converged)
        result = anchored_trajectories(agents)
        for robot, traj in result.items():
            self.assertEqual(traj, untouched[robot])
            self.assertEqual(len(traj), len(odometry[robot]))
            origin = odometry[robot].poses[0]
            for (t, pose), reference in zip(traj.items(), odometry[robot].poses):
                self.assertTrue(pose.almost_equal(between(origin, reference), 1e-9), msg=f"{robot} {t}")

    def test_deterministic(self):
        def run():
            noise = NoiseConfig(rng_seed=2)
            _, odometry, edges = _scenario(2, noise, closure_sigma=[0.3, 0.3, 0.1])
            agents = make_agents(odometry, edges, noise)
            statuses = run_dpgo(agents, SimulatedNetwork(NetConfig(drop_probability=0.3, seed=1)), max_rounds=20)
            return [(s.round, s.complete, s.converged, s.cost, s.resent) for s in statuses]

        self.assertEqual(run(), run())

    def test_lost_separators_keep_rounds_incomplete(self):
        _, odometry, edges = _scenario()
        agents = make_agents(odometry, edges, ZERO_NOISE)
        statuses = run_dpgo(agents, SimulatedNetwork(NetConfig(drop_probability=1.0)), max_rounds=3)
        self.assertEqual(len(statuses), 3)
        self.assertFalse(any(s.converged or s.complete for s in statuses))
        self.assertTrue(all(s.resent > 0 for s in statuses))
        self.assertFalse(agents[1].anchored)
        self.assertTrue(math.isfinite(statuses[-1].cost))


if __name__ == '__main__':
    unittest.main()
