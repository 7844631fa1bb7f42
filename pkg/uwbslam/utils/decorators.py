import functools
import logging
from typing import Any, Callable

from .time import Timer, OpTimings, active_timings

__all__ = ["time_exec"]

logger = logging.getLogger(__name__)


def time_exec(func: Callable = None, *, name: str = None, timings: OpTimings = None) -> Callable:
    """
    Records the wall-clock duration of each call into an OpTimings registry
    (the one activated in the calling context by default, see
    ``OpTimings.activate``) and logs it at DEBUG.

    Usable bare (``@time_exec``) or with options (``@time_exec(name="pcm.update")``).
    """

    def register(f):
        op_name = name or f.__qualname__

        @functools.wraps(f)
        def wrapper(*args, **kwargs) -> Any:
            timer = Timer()
            try:
                return f(*args, **kwargs)
            finally:
                elapsed = timer.elapsed
                (timings or active_timings()).record(op_name, elapsed)
                logger.debug(f"[{op_name}] performed {elapsed * 1e3:.3f} ms")

        return wrapper

    if func is not None:
        return register(func)
    return register
