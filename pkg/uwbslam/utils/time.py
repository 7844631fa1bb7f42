import statistics
import threading
import time as _time
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Dict, Iterator, List, Optional

__all__ = ["Timer", "OpTimings", "TIMINGS", "active_timings"]


class Timer:
    """
    Wall-clock stopwatch. Started on creation; as a context manager it restarts
    on entry and freezes ``elapsed`` on exit.
    """

    def __init__(self, start=True):
        self._start = 0.0
        self._stop = None
        if start:
            self.start()

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self._stop = _time.perf_counter()
        return False

    def start(self):
        self._start = _time.perf_counter()
        self._stop = None

    @property
    def elapsed(self) -> float:
        end = self._stop
        return (end if end is not None else _time.perf_counter()) - self._start


class OpTimings:
    """
    Per-operation wall-clock samples. Safe to record into from several threads.

    ``time_exec`` records into the registry activated in the current context, so
    concurrent runs each holding their own registry never see each other's samples.

    >>> timings = OpTimings()
    >>> timings.record("estimate", 0.012)
    >>> timings.median_ms("estimate")
    12.0
    """

    def __init__(self):
        self._samples: Dict[str, List[float]] = {}
        self._lock = threading.Lock()

    def record(self, name: str, seconds: float) -> None:
        with self._lock:
            self._samples.setdefault(name, []).append(float(seconds))

    def samples(self, name: str) -> List[float]:
        with self._lock:
            return list(self._samples.get(name, ()))

    def median_ms(self, name: str) -> float:
        values = self.samples(name)
        if not values:
            return 0.0
        return 1e3 * statistics.median(values)

    def count(self, name: str) -> int:
        return len(self.samples(name))

    def names(self):
        with self._lock:
            return sorted(self._samples)

    def summary(self) -> Dict[str, float]:
        return {name: self.median_ms(name) for name in self.names()}

    @contextmanager
    def activate(self) -> Iterator["OpTimings"]:
        token = _ACTIVE.set(self)
        try:
            yield self
        finally:
            _ACTIVE.reset(token)


# fallback for calls made outside any activated registry
TIMINGS = OpTimings()

_ACTIVE: ContextVar[Optional[OpTimings]] = ContextVar("uwbslam_timings", default=None)


def active_timings() -> OpTimings:
    return _ACTIVE.get() or TIMINGS
