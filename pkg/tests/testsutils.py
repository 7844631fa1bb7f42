import threading
import time
import unittest

from uwbslam import get_version_pep440_compliant
from uwbslam.concurrently import MultiProcess
from uwbslam.utils import TIMINGS, OpTimings, Timer, active_timings, get_version, time_exec


class TimerTest(unittest.TestCase):
    def test_context_freezes_elapsed(self):
        with Timer() as timer:
            time.sleep(0.01)
        first = timer.elapsed
        time.sleep(0.01)
        self.assertGreaterEqual(first, 0.01)
        self.assertEqual(timer.elapsed, first)

    def test_running_timer_keeps_counting(self):
        timer = Timer()
        first = timer.elapsed
        time.sleep(0.005)
        self.assertGreater(timer.elapsed, first)


class OpTimingsTest(unittest.TestCase):
    def test_median_and_summary(self):
        timings = OpTimings()
        for value in (0.003, 0.001, 0.002):
            timings.record("pcm", value)
        timings.record("dpgo_round", 0.5)
        self.assertAlmostEqual(timings.median_ms("pcm"), 2.0)
        self.assertEqual(timings.median_ms("missing"), 0.0)
        self.assertEqual(timings.names(), ["dpgo_round", "pcm"])
        self.assertEqual(timings.summary()["dpgo_round"], 500.0)

    def test_time_exec(self):
        timings = OpTimings()

        @time_exec(name="square", timings=timings)
        def square(x):
            return x * x

        @time_exec(timings=timings)
        def fail():
            raise KeyError("x")

        self.assertEqual(square(4), 16)
        square(5)
        with self.assertRaises(KeyError):
            fail()
        self.assertEqual(timings.count("square"), 2)
        self.assertEqual(timings.count("OpTimingsTest.test_time_exec.<locals>.fail"), 1)
        self.assertEqual(square.__name__, "square")

    def test_records_from_threads(self):
        timings = OpTimings()
        threads = [threading.Thread(target=lambda: [timings.record("t", 1.0) for _ in range(100)])
                   for _ in range(4)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        self.assertEqual(timings.count("t"), 400)

    def test_activate_routes_time_exec(self):
        @time_exec(name="utils.activate")
        def step():
            return 1

        before = TIMINGS.count("utils.activate")
        outer, inner = OpTimings(), OpTimings()
        self.assertIs(active_timings(), TIMINGS)
        with outer.activate():
            step()
            with inner.activate():
                self.assertIs(active_timings(), inner)
                step()
                step()
            step()
        self.assertIs(active_timings(), TIMINGS)
        self.assertEqual((outer.count("utils.activate"), inner.count("utils.activate")), (2, 2))
        self.assertEqual(TIMINGS.count("utils.activate"), before)

    def test_concurrent_registries_stay_apart(self):
        @time_exec(name="utils.concurrent")
        def step():
            time.sleep(0.001)

        registries = [OpTimings(), OpTimings()]
        ready = threading.Barrier(2)

        def run(registry, calls):
            with registry.activate():
                ready.wait()
                for _ in range(calls):
                    step()

        threads = [threading.Thread(target=run, args=(registries[0], 3)),
                   threading.Thread(target=run, args=(registries[1], 7))]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        self.assertEqual([r.count("utils.concurrent") for r in registries], [3, 7])

    def test_worker_threads_inherit_the_active_registry(self):
        @time_exec(name="utils.worker")
        def square(x):
            return x * x

        timings = OpTimings()
        with timings.activate():
            self.assertEqual(MultiProcess(3).map(square, range(5)), [0, 1, 4, 9, 16])
        self.assertEqual(timings.count("utils.worker"), 5)
        self.assertEqual(TIMINGS.count("utils.worker"), 0)


class MultiProcessTest(unittest.TestCase):
    def test_results_keep_input_order(self):
        def slow_square(x):
            time.sleep(0.001 * (10 - x))
            return x * x

        self.assertEqual(MultiProcess(4).map(slow_square, range(10)), [x * x for x in range(10)])
        self.assertEqual(MultiProcess(2).map(lambda x, k: x + k, [1, 2], 10), [11, 12])
        self.assertEqual(MultiProcess(3).map(slow_square, []), [])

    def test_failure_is_chained(self):
        def boom(x):
            if x == 3:
                raise ValueError("three")
            return x

        with self.assertRaises(ChildProcessError) as ctx:
            MultiProcess(1).map(boom, range(6))
        self.assertIsInstance(ctx.exception.__cause__, ValueError)
        self.assertIn("task item 3", str(ctx.exception))

    def test_invalid_thread_count(self):
        with self.assertRaises(ValueError):
            MultiProcess(0)


class VersionTest(unittest.TestCase):
    def test_pep440(self):
        self.assertEqual(get_version("0.1.0.final.0"), (0, 1, 0, "final", 0))
        self.assertEqual(get_version_pep440_compliant("0.1.0.final.0"), "0.1.0")
        self.assertEqual(get_version_pep440_compliant("1.2.3.final.2"), "1.2.3.post2")
        self.assertEqual(get_version_pep440_compliant("1.2.0.beta.1"), "1.2.0b1")
        with self.assertRaises(ValueError):
            get_version("1.2")
        with self.assertRaises(ValueError):
            get_version("1.2.3.nightly.0")


if __name__ == '__main__':
    unittest.main()
