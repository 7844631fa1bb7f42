import math
import unittest

import numpy as np

from uwbslam.concurrently import MultiProcess
from uwbslam.config import (DpgoConfig, EstimatorConfig, NoiseConfig, PcmConfig, PipelineConfig, ScenarioConfig,
                            SearchConfig)
from uwbslam.dpgo import SeparatorPoseMsg
from uwbslam.geometry import Pose2
from uwbslam.metrics import closure_errors, compute_metrics, trajectory_errors
from uwbslam.network import Message, MessageKind, OdomWindow
from uwbslam.node import UID_STRIDE, RobotNode, run_simulation, sensor_timeline
from uwbslam.scenario import Dataset, RangingMeasurement, Trajectory, simulate_dataset
from uwbslam.utils import TIMINGS

ZERO_NOISE = NoiseConfig(odom_trans_sigma=0.0, odom_rot_sigma=0.0, uwb_sigma=0.0)


def _dataset(duration=30.0, seed=3, speed=0.5):
    return simulate_dataset(ScenarioConfig(n_robots=3, duration=duration, speed_limit=speed, seed=seed), ZERO_NOISE)


def _pipeline(**dpgo):
    return PipelineConfig(estimator=EstimatorConfig(tau=100), dpgo=DpgoConfig(**dpgo))


class RobotNodeTest(unittest.TestCase):
    def test_snapshot_before_data(self):
        snapshot = RobotNode(1, noise=ZERO_NOISE).snapshot()
        self.assertEqual(len(snapshot.trajectory), 0)
        self.assertEqual((snapshot.raw_closures, snapshot.inlier_closures, snapshot.bytes_sent), (0, 0, 0))
        self.assertFalse(snapshot.anchored)
        self.assertTrue(RobotNode(0, noise=ZERO_NOISE).snapshot().anchored)

    def test_no_neighbours_sends_nothing(self):
        node = RobotNode(0, noise=ZERO_NOISE)
        for k in range(20):
            self.assertEqual(node.tick(k * 0.1, Pose2(0.05 * k, 0.0, 0.0)), [])
        self.assertEqual(len(node.odometry), 20)
        self.assertEqual(len(node.snapshot().trajectory), 20)

    def test_higher_id_shares_odometry(self):
        low, high = RobotNode(0, noise=ZERO_NOISE), RobotNode(1, noise=ZERO_NOISE)
        for node in (low, high):
            node.tick(0.0, Pose2())
        heard_by_high = [RangingMeasurement(0.02, 1, 0, 3.0)]
        heard_by_low = [RangingMeasurement(0.02, 0, 1, 3.0)]
        self.assertEqual(low.tick(0.02, rangings=heard_by_low), [])
        out = high.tick(0.02, rangings=heard_by_high)
        self.assertEqual([(o.receiver, o.kind) for o in out], [(0, MessageKind.ODOM_WINDOW)])
        self.assertEqual(out[0].payload.samples, ((0.0, 0.0, 0.0, 0.0),))
        # only new samples go out on the next contact
        self.assertEqual(high.tick(0.04, rangings=[RangingMeasurement(0.04, 1, 0, 3.0)]), [])

    def test_odometry_message_builds_peer_log(self):
        node = RobotNode(0, noise=ZERO_NOISE)
        samples = OdomWindow(((0.0, 0.0, 0.0, 0.0), (0.1, 0.1, 0.0, 0.0)))
        node.tick(0.1, Pose2(), inbox=[Message(1, 0, MessageKind.ODOM_WINDOW, 0.1, samples, 80)])
        log = node.neighbors[1].peer_odometry
        self.assertEqual(len(log), 2)
        self.assertEqual(log.pose(1), Pose2(0.1, 0.0, 0.0))

    def test_unexpected_message_is_dropped(self):
        node = RobotNode(0, noise=ZERO_NOISE)
        stray = Message(1, 0, MessageKind.SEPARATOR_POSES, 0.0, SeparatorPoseMsg(1, 0, False), 16)
        with self.assertLogs("uwbslam.node", level="WARNING"):
            node.tick(0.0, Pose2(), inbox=[stray])
        self.assertEqual(node.snapshot().dropped_messages, 1)

    def test_time_goes_forward(self):
        node = RobotNode(0, noise=ZERO_NOISE)
        node.tick(1.0, Pose2())
        with self.assertRaises(ValueError):
            node.tick(0.5, Pose2())


class TimelineTest(unittest.TestCase):
    def test_merged_grid(self):
        odometry = {0: Trajectory([0.0, 0.1], [(0, 0, 0), (0, 0, 0)]),
                    1: Trajectory([0.0, 0.1], [(0, 0, 0), (0, 0, 0)])}
        ranging = [RangingMeasurement(0.02, 0, 1, 1.0), RangingMeasurement(0.02, 1, 0, 1.0)]
        timeline, odom_at, ranging_at = sensor_timeline(Dataset(odometry=odometry, ranging=ranging))
        self.assertEqual(timeline.tolist(), [0.0, 0.02, 0.1])
        self.assertEqual(odom_at[1], {0.0: 0, 0.1: 1})
        self.assertEqual([m.target for m in ranging_at[0.02][0]], [1])


def _trajectory_errors(result, truth):
    """Errors with the anchored robots aligned jointly and every other robot on its own."""
    groups = [result.anchored] + [[r] for r in sorted(result.trajectories) if r not in result.anchored]
    return trajectory_errors(result.trajectories, truth, groups)


class ZeroNoiseRecoveryTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        scenario = ScenarioConfig(n_robots=3, duration=300.0, speed_limit=0.2, arena_width=10.0, arena_height=12.0,
                                  seed=42)
        cls.dataset = simulate_dataset(scenario, ZERO_NOISE)
        pipeline = PipelineConfig(search=SearchConfig(delta=0.1), estimator=EstimatorConfig(tau=50),
                                  pcm=PcmConfig(epsilon=0.5))
        cls.result = run_simulation(cls.dataset, pipeline, ZERO_NOISE)

    def test_trajectories_match_truth(self):
        self.assertEqual(sorted(self.result.trajectories), [0, 1, 2])
        trans, rot = _trajectory_errors(self.result, self.dataset.truth)
        self.assertLessEqual(trans.max(), 0.02)
        self.assertLessEqual(rot.max(), 0.2)

    def test_closures_are_accurate(self):
        trans, rot = closure_errors(self.result.inlier_closures, self.dataset.truth)
        self.assertTrue(np.all(trans <= 0.02))
        self.assertTrue(np.all(rot <= 0.2))

    def test_runtime(self):
        self.assertLess(self.result.elapsed, 60.0)
        self.assertLess(self.result.timings["node_tick"], 100.0)


class SimulationTest(unittest.TestCase):
    duration = 60.0

    @classmethod
    def setUpClass(cls) -> None:
        cls.dataset = _dataset(cls.duration)
        cls.result = run_simulation(cls.dataset, _pipeline(), ZERO_NOISE, record_snapshots=True)

    def test_noiseless_run_matches_truth(self):
        self.assertIn(0, self.result.anchored)
        self.assertGreater(len(self.result.raw_closures), 0)
        self.assertFalse(any(lc.degenerate for lc in self.result.raw_closures))
        trans, rot = _trajectory_errors(self.result, self.dataset.truth)
        self.assertLessEqual(trans.max(), 0.02)
        self.assertLessEqual(rot.max(), 0.2)

    def test_lower_id_owns_each_pair(self):
        for lc in self.result.raw_closures:
            self.assertLess(lc.source, lc.target)
            self.assertEqual(lc.uid // UID_STRIDE, lc.source)

    def test_one_closure_per_period(self):
        period = _pipeline().estimate_period
        for pair in ((0, 1), (0, 2), (1, 2)):
            times = [lc.t for lc in self.result.raw_closures if lc.pair == pair]
            self.assertLessEqual(len(times), self.duration / period + 1)
            self.assertEqual(len(set(times)), len(times))

    def test_snapshots(self):
        for robot, snapshots in self.result.snapshots.items():
            raw = [s.raw_closures for s in snapshots]
            self.assertEqual(raw, sorted(raw))
            self.assertTrue(all(s.inlier_closures <= s.raw_closures for s in snapshots))
            times = [s.t for s in snapshots]
            self.assertEqual(times, sorted(times))
        self.assertEqual(self.result.snapshots[2][0].raw_closures, 0)

    def test_communication_accounted(self):
        comm = self.result.comm
        self.assertGreater(comm.bytes_of(MessageKind.ODOM_WINDOW), 0)
        self.assertEqual(sum(comm.sender_bytes.values()), comm.total_bytes)
        self.assertTrue(math.isfinite(self.result.final_cost))

    def test_run_keeps_its_own_timings(self):
        self.assertIn("node_tick", self.result.timings)
        self.assertIn("dpgo_round", self.result.timings)


class NoisyRunTest(unittest.TestCase):
    """Noisy runs with every estimate passed on, so the consistency check does the filtering."""

    @staticmethod
    def _pipeline(**dpgo):
        return PipelineConfig(estimator=EstimatorConfig(tau=100, ambiguity_ratio=0.0), dpgo=DpgoConfig(**dpgo))

    def test_each_stage_improves_on_the_last(self):
        means = {stage: [] for stage in ("raw", "pcm", "dpgo")}
        for seed in (1, 2, 3):
            noise = NoiseConfig(rng_seed=seed)
            dataset = simulate_dataset(ScenarioConfig(n_robots=3, duration=90.0, speed_limit=0.5, seed=seed), noise)
            result = run_simulation(dataset, self._pipeline(), noise)
            report = compute_metrics(dataset.truth, result.raw_closures, result.inlier_closures,
                                     result.trajectories, anchored=result.anchored)
            for stage in means:
                errors = report.stage(stage)
                means[stage].append((errors.trans_mean, errors.rot_mean))
        raw, pcm, dpgo = (np.mean(means[stage], axis=0) for stage in ("raw", "pcm", "dpgo"))
        self.assertTrue(np.all(np.isfinite([raw, pcm, dpgo])))
        self.assertLessEqual(pcm[0], raw[0])
        self.assertLessEqual(pcm[1], raw[1])
        self.assertLessEqual(dpgo[0], pcm[0])
        self.assertLessEqual(dpgo[1], pcm[1])

    def test_separator_bytes_scale_with_round_rate(self):
        noise = NoiseConfig(rng_seed=4)
        dataset = simulate_dataset(ScenarioConfig(n_robots=3, duration=60.0, speed_limit=0.5, seed=4), noise)
        slow = run_simulation(dataset, self._pipeline(update_rate=1.0, finalize=False), noise)
        again = run_simulation(dataset, self._pipeline(update_rate=1.0, finalize=False), noise)
        fast = run_simulation(dataset, self._pipeline(update_rate=10.0, finalize=False), noise)
        self.assertEqual(slow.comm.total_bytes, again.comm.total_bytes)
        self.assertEqual({k: s.bytes for k, s in slow.comm.kinds.items()},
                         {k: s.bytes for k, s in again.comm.kinds.items()})
        slow_bytes = slow.comm.bytes_of(MessageKind.SEPARATOR_POSES)
        self.assertGreater(slow_bytes, 0)
        self.assertGreaterEqual(fast.comm.bytes_of(MessageKind.SEPARATOR_POSES), 5 * slow_bytes)


class SimulationOptionsTest(unittest.TestCase):
    def test_snapshot_count_without_finalize(self):
        dataset = _dataset(duration=10.0)
        result = run_simulation(dataset, _pipeline(finalize=False), ZERO_NOISE, record_snapshots=True)
        for snapshots in result.snapshots.values():
            self.assertEqual(len(snapshots), result.rounds + 1)

    def test_parallel_equals_sequential(self):
        dataset = _dataset(duration=8.0, seed=5)
        sequential = run_simulation(dataset, _pipeline(), ZERO_NOISE)
        parallel_cfg = _pipeline().replace(parallel=True)
        parallel = run_simulation(dataset, parallel_cfg, ZERO_NOISE, max_threads=3)
        self.assertEqual([(lc.uid, lc.t, lc.pose) for lc in sequential.raw_closures],
                         [(lc.uid, lc.t, lc.pose) for lc in parallel.raw_closures])
        self.assertEqual(sequential.comm.total_bytes, parallel.comm.total_bytes)
        for robot in sequential.trajectories:
            self.assertEqual(sequential.trajectories[robot], parallel.trajectories[robot])
        self.assertEqual(sorted(sequential.timings), sorted(parallel.timings))

    def test_timings_stay_out_of_the_shared_registry(self):
        before = TIMINGS.count("node_tick")
        result = run_simulation(_dataset(duration=3.0), _pipeline(), ZERO_NOISE, max_threads=2)
        self.assertGreater(result.timings["node_tick"], 0.0)
        self.assertEqual(TIMINGS.count("node_tick"), before)

    def test_concurrent_runs_report_their_own_timings(self):
        short, long_ = _dataset(duration=2.0, seed=6), _dataset(duration=6.0, seed=6)
        results = MultiProcess(2).map(lambda d: run_simulation(d, _pipeline(finalize=False), ZERO_NOISE),
                                      [short, long_])
        alone = [run_simulation(d, _pipeline(finalize=False), ZERO_NOISE) for d in (short, long_)]
        for together, single in zip(results, alone):
            self.assertEqual(sorted(together.timings), sorted(single.timings))
            self.assertEqual(together.rounds, single.rounds)

    def test_dataset_without_truth(self):
        dataset = _dataset(duration=5.0)
        result = run_simulation(Dataset(odometry=dataset.odometry, ranging=dataset.ranging), _pipeline(),
                                ZERO_NOISE)
        self.assertEqual(sorted(result.trajectories), [0, 1, 2])

    def test_empty_dataset(self):
        with self.assertRaises(ValueError):
            run_simulation(Dataset(odometry={}, ranging=[]))


if __name__ == '__main__':
    unittest.main()
