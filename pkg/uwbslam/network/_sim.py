"""

Copyright (c) 2024 The uwbslam Project

Permission is hereby granted, free of charge, to any person obtaining a copy
of this software and associated documentation files (the "Software"), to deal
in the Software without restriction, including without limitation the rights
to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
copies of the Software, and to permit persons to whom the Software is
furnished to do so, subject to the following conditions:

The above copyright notice and this permission notice shall be included in all
copies or substantial portions of the Software.

THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
SOFTWARE.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Deque, Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..config import NetConfig, ParameterError
from ..config.slam_types import Positions
from ..config._constants import (DATA_UNIT_MAP, LOOP_CLOSURE_SCALARS, ODOM_SAMPLE_SCALARS, POSE_BYTES,
                                 SCALAR_BYTES, VERDICT_ID_SCALARS)

__all__ = [
    "MessageKind",
    "Message",
    "OdomWindow",
    "PcmVerdict",
    "payload_size",
    "KindStats",
    "CommReport",
    "SimulatedNetwork",
]

logger = logging.getLogger(__name__)


class MessageKind(Enum):
    ODOM_WINDOW = "OdomWindow"
    LOOP_CLOSURE = "LoopClosure"
    SEPARATOR_POSES = "SeparatorPoses"
    PCM_VERDICT = "PcmVerdict"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class OdomWindow:
    """Odometry samples ``(t, x, y, theta)`` of the sender not shared before."""
    samples: Tuple[Tuple[float, float, float, float], ...]


@dataclass(frozen=True)
class PcmVerdict:
    """Uids of the closures of the sender/receiver pair currently in the consistent set."""
    uids: Tuple[int, ...]


def payload_size(kind: MessageKind, payload: Any) -> int:
    """
    Serialized payload size in bytes. Every scalar is a double; keys and flags
    that both ends can infer (robot ids, keyframe keys of separator poses) are
    not transmitted.
    """
    if kind is MessageKind.ODOM_WINDOW:
        return len(payload.samples) * ODOM_SAMPLE_SCALARS * SCALAR_BYTES
    if kind is MessageKind.LOOP_CLOSURE:
        return LOOP_CLOSURE_SCALARS * SCALAR_BYTES
    if kind is MessageKind.SEPARATOR_POSES:
        return len(payload.poses) * POSE_BYTES
    if kind is MessageKind.PCM_VERDICT:
        return len(payload.uids) * VERDICT_ID_SCALARS * SCALAR_BYTES
    raise ValueError(f"unknown message kind {kind!r}")


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    kind: MessageKind
    t: float
    payload: Any
    size_bytes: int


@dataclass
class KindStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    expired: int = 0
    bytes: int = 0


@dataclass
class CommReport:
    """Per-kind message counters and byte totals; bytes are counted when a message is sent."""
    kinds: Dict[MessageKind, KindStats] = field(default_factory=lambda: {k: KindStats() for k in MessageKind})
    sender_bytes: Dict[int, int] = field(default_factory=dict)

    @property
    def total_bytes(self) -> int:
        return sum(s.bytes for s in self.kinds.values())

    @property
    def total_messages(self) -> int:
        return sum(s.sent for s in self.kinds.values())

    def bytes_of(self, kind: MessageKind) -> int:
        return self.kinds[kind].bytes

    def copy(self) -> "CommReport":
        return CommReport({k: KindStats(**vars(s)) for k, s in self.kinds.items()}, dict(self.sender_bytes))

    def rows(self) -> List[Dict[str, Any]]:
        rows = [dict(kind=str(kind), **vars(stats)) for kind, stats in self.kinds.items()]
        rows.append(dict(kind="total", sent=self.total_messages,
                         delivered=sum(s.delivered for s in self.kinds.values()),
                         dropped=sum(s.dropped for s in self.kinds.values()),
                         expired=sum(s.expired for s in self.kinds.values()),
                         bytes=self.total_bytes))
        return rows

    def to_text(self, unit: str = "MB") -> str:
        scale = DATA_UNIT_MAP[unit]
        lines = [f"{'kind':<16}{'sent':>10}{'delivered':>11}{'dropped':>9}{'expired':>9}{'bytes':>14}{unit:>12}"]
        for row in self.rows():
            lines.append(f"{row['kind']:<16}{row['sent']:>10}{row['delivered']:>11}{row['dropped']:>9}"
                         f"{row['expired']:>9}{row['bytes']:>14}{row['bytes'] / scale:>12.6f}")
        for sender in sorted(self.sender_bytes):
            lines.append(f"robot {sender:<10}{'':>39}{self.sender_bytes[sender]:>14}"
                         f"{self.sender_bytes[sender] / scale:>12.6f}")
        return "\n".join(lines) + "\n"


@dataclass
class _Pending:
    message: Message
    ready_at: float
    expires_at: float


class SimulatedNetwork:
    """
    Single FIFO event queue advanced by the simulation clock.

    ``send`` enqueues and accounts; ``step`` delivers the messages whose latency
    elapsed and whose endpoints are within ``comm_range``; ``receive`` drains a
    robot's mailbox. Loss is drawn from a generator seeded by ``cfg.seed`` in
    queue order, so runs with the same schedule are identical.
    """

    def __init__(self, cfg: NetConfig = None):
        self.cfg = cfg or NetConfig()
        self._queue: Deque[_Pending] = deque()
        self._inbox: Dict[int, List[Message]] = {}
        self._rng = np.random.default_rng([int(self.cfg.seed), 3])
        self._now = -math.inf
        self._report = CommReport()
        self.last_dropped: List[Message] = []

    @property
    def now(self) -> float:
        return self._now

    @property
    def pending(self) -> int:
        return len(self._queue)

    def send(self, sender: int, receiver: int, kind: MessageKind, payload: Any, t: float) -> Message:
        if sender == receiver:
            raise ParameterError("receiver", receiver, "a robot other than the sender")
        size = int(self.cfg.header_bytes) + payload_size(kind, payload)
        message = Message(sender, receiver, kind, float(t), payload, size)
        stats = self._report.kinds[kind]
        stats.sent += 1
        stats.bytes += size
        self._report.sender_bytes[sender] = self._report.sender_bytes.get(sender, 0) + size
        self._queue.append(_Pending(message, message.t + self.cfg.latency, message.t + self.cfg.ttl))
        return message

    def _in_range(self, message: Message, positions: Optional[Positions]) -> bool:
        if positions is None:
            return True
        if message.sender not in positions or message.receiver not in positions:
            return False
        (ax, ay), (bx, by) = positions[message.sender][:2], positions[message.receiver][:2]
        return math.hypot(ax - bx, ay - by) <= self.cfg.comm_range

    def step(self, now: float, positions: Optional[Positions] = None) -> List[Message]:
        """
        Delivers what can be delivered at ``now``. ``positions`` maps robot ids to
        their true ``(x, y)``; without it connectivity is not checked.
        """
        if now < self._now:
            raise ParameterError("now", now, f"a time not before {self._now!r}")
        self._now = float(now)
        delivered = []
        kept: Deque[_Pending] = deque()
        self.last_dropped = []
        for pending in self._queue:
            message = pending.message
            stats = self._report.kinds[message.kind]
            if now >= pending.ready_at and self._in_range(message, positions):
                if self.cfg.drop_probability > 0 and self._rng.random() < self.cfg.drop_probability:
                    stats.dropped += 1
                    self.last_dropped.append(message)
                    continue
                stats.delivered += 1
                self._inbox.setdefault(message.receiver, []).append(message)
                delivered.append(message)
            elif now >= pending.expires_at:
                stats.expired += 1
                logger.debug(f"{message.kind} {message.sender}->{message.receiver} expired at t={now:.3f}")
            else:
                kept.append(pending)
        self._queue = kept
        return delivered

    def receive(self, robot: int, kinds: Iterable[MessageKind] = None) -> List[Message]:
        """Removes and returns the robot's delivered messages (optionally of some kinds), oldest first."""
        box = self._inbox.get(robot, [])
        if kinds is None:
            self._inbox[robot] = []
            return box
        kinds = set(kinds)
        taken = [m for m in box if m.kind in kinds]
        self._inbox[robot] = [m for m in box if m.kind not in kinds]
        return taken

    def account(self) -> CommReport:
        return self._report.copy()
