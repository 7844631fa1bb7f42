import unittest

from uwbslam.config import NetConfig, ParameterError
from uwbslam.dpgo import SeparatorPoseMsg
from uwbslam.geometry import Pose2
from uwbslam.network import CommReport, MessageKind, OdomWindow, PcmVerdict, SimulatedNetwork, payload_size

NEAR = {0: (0.0, 0.0), 1: (3.0, 4.0)}
FAR = {0: (0.0, 0.0), 1: (101.0, 0.0)}


def _verdict(n=2):
    return PcmVerdict(tuple(range(n)))


class PayloadSizeTest(unittest.TestCase):
    def test_sizes(self):
        poses = SeparatorPoseMsg(sender=0, round=1, anchored=True,
                                 poses={(0, k): Pose2(k, 0, 0) for k in range(10)})
        self.assertEqual(payload_size(MessageKind.SEPARATOR_POSES, poses), 240)
        samples = OdomWindow(tuple((0.1 * k, 0.0, 0.0, 0.0) for k in range(5)))
        self.assertEqual(payload_size(MessageKind.ODOM_WINDOW, samples), 5 * 4 * 8)
        self.assertEqual(payload_size(MessageKind.LOOP_CLOSURE, None), 12 * 8)
        self.assertEqual(payload_size(MessageKind.PCM_VERDICT, _verdict(3)), 24)

    def test_separator_message_bytes(self):
        net = SimulatedNetwork(NetConfig(header_bytes=16))
        poses = SeparatorPoseMsg(sender=0, round=1, anchored=True,
                                 poses={(0, k): Pose2() for k in range(10)})
        message = net.send(0, 1, MessageKind.SEPARATOR_POSES, poses, 0.0)
        self.assertEqual(message.size_bytes, 10 * 24 + 16)
        self.assertEqual(net.account().bytes_of(MessageKind.SEPARATOR_POSES), 256)


class SimulatedNetworkTest(unittest.TestCase):
    def test_immediate_delivery_in_range(self):
        net = SimulatedNetwork(NetConfig(comm_range=100.0, latency=0.0))
        net.send(0, 1, MessageKind.PCM_VERDICT, _verdict(), 1.0)
        delivered = net.step(1.0, NEAR)
        self.assertEqual(len(delivered), 1)
        self.assertEqual(net.pending, 0)
        inbox = net.receive(1)
        self.assertEqual([m.payload for m in inbox], [_verdict()])
        self.assertEqual(net.receive(1), [])

    def test_out_of_range_waits_then_expires(self):
        net = SimulatedNetwork(NetConfig(comm_range=100.0, ttl=2.0))
        net.send(0, 1, MessageKind.PCM_VERDICT, _verdict(), 0.0)
        self.assertEqual(net.step(1.0, FAR), [])
        self.assertEqual(net.pending, 1)
        self.assertEqual(net.step(2.0, FAR), [])
        self.assertEqual(net.pending, 0)
        stats = net.account().kinds[MessageKind.PCM_VERDICT]
        self.assertEqual((stats.sent, stats.delivered, stats.expired), (1, 0, 1))

    def test_latency(self):
        net = SimulatedNetwork(NetConfig(latency=0.5))
        net.send(0, 1, MessageKind.PCM_VERDICT, _verdict(), 0.0)
        self.assertEqual(net.step(0.4), [])
        self.assertEqual(len(net.step(0.5)), 1)

    def test_drop_everything_still_counts_bytes(self):
        net = SimulatedNetwork(NetConfig(drop_probability=1.0))
        for k in range(5):
            net.send(0, 1, MessageKind.PCM_VERDICT, _verdict(), float(k))
        self.assertEqual(net.step(10.0, NEAR), [])
        self.assertEqual(len(net.last_dropped), 5)
        report = net.account()
        self.assertEqual(report.kinds[MessageKind.PCM_VERDICT].dropped, 5)
        self.assertEqual(report.total_bytes, 5 * (16 + 16))
        self.assertEqual(report.sender_bytes, {0: 160})

    def test_fifo_order_and_kind_filter(self):
        net = SimulatedNetwork()
        net.send(0, 2, MessageKind.PCM_VERDICT, _verdict(1), 0.0)
        net.send(1, 2, MessageKind.LOOP_CLOSURE, "lc", 0.0)
        net.send(0, 2, MessageKind.PCM_VERDICT, _verdict(2), 0.0)
        net.step(0.0)
        verdicts = net.receive(2, [MessageKind.PCM_VERDICT])
        self.assertEqual([m.payload for m in verdicts], [_verdict(1), _verdict(2)])
        self.assertEqual([m.kind for m in net.receive(2)], [MessageKind.LOOP_CLOSURE])

    def test_seeded_loss_is_reproducible(self):
        def run(seed):
            net = SimulatedNetwork(NetConfig(drop_probability=0.5, seed=seed))
            for k in range(50):
                net.send(k % 2, 1 - k % 2, MessageKind.PCM_VERDICT, _verdict(), 0.0)
            return [(m.sender, m.t) for m in net.step(0.0)], net.account().kinds[MessageKind.PCM_VERDICT].dropped

        self.assertEqual(run(4), run(4))
        self.assertGreater(run(4)[1], 0)

    def test_contract_errors(self):
        net = SimulatedNetwork()
        with self.assertRaises(ParameterError):
            net.send(1, 1, MessageKind.PCM_VERDICT, _verdict(), 0.0)
        net.step(5.0)
        with self.assertRaises(ParameterError):
            net.step(4.0)
        with self.assertRaises(ParameterError):
            NetConfig(drop_probability=1.5)


class CommReportTest(unittest.TestCase):
    def test_empty_report(self):
        report = SimulatedNetwork().account()
        self.assertEqual(report.total_bytes, 0)
        self.assertEqual(report.total_messages, 0)
        self.assertEqual(report.rows()[-1]["kind"], "total")

    def test_report_is_a_copy(self):
        net = SimulatedNetwork()
        report = net.account()
        net.send(0, 1, MessageKind.PCM_VERDICT, _verdict(), 0.0)
        self.assertEqual(report.total_bytes, 0)
        self.assertEqual(net.account().total_messages, 1)

    def test_text_lists_every_kind(self):
        text = CommReport().to_text()
        for kind in MessageKind:
            self.assertIn(str(kind), text)
        self.assertIn("MB", text.splitlines()[0])


if __name__ == '__main__':
    unittest.main()
