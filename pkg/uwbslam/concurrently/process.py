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
import abc
import contextvars
import logging
import threading
from typing import Any, Callable, Iterable, List

__all__ = ["MultiProcess"]

logger = logging.getLogger(__name__)


class _IMultiProcess(abc.ABC):
    @abc.abstractmethod
    def _store_response(self, response):
        return NotImplementedError

    @abc.abstractmethod
    def _get_response(self):
        return NotImplementedError


class MultiProcess(_IMultiProcess):
    """
    Runs a function over many values on at most ``max_threads`` threads and
    returns the results in input order.

    Used for independent work only (robot ticks between network sync points,
    sweep cells); the caller owns any ordering beyond the returned list.
    """

    def __init__(self, max_threads: int):
        if max_threads < 1:
            raise ValueError(f"max_threads must be at least 1, got {max_threads}")
        self.max_threads = max_threads
        self._active_threads = 0
        self._lock = threading.Lock()
        self._thread_available = threading.Condition(self._lock)
        self._terminate = False
        self._results = []
        self._exception_err = None
        self._failed_index = None

    def _create_task(self, function, value, indx, *args, **kwargs):
        self.wait_for_available_thread()
        if self._terminate:
            return False
        # workers see the caller's context variables (the active timing registry)
        context = contextvars.copy_context()
        thread = threading.Thread(target=context.run, name=f"uwbslam-worker-{indx}",
                                  args=(self._execute_function_thread, function, value, indx, args, kwargs))
        with self._lock:
            self._active_threads += 1
        thread.start()
        return True

    def _get_response(self) -> List[Any]:
        with self._thread_available:
            while self._active_threads > 0:
                self._thread_available.wait()
            results = [val[-1] for val in sorted(self._results, key=lambda val: val[0])]
            self._results = []
            return results

    def _store_response(self, response):
        with self._lock:
            self._results.append(response)

    def map(self, function: Callable, values: Iterable, *args, **kwargs) -> List[Any]:
        """
        Applies ``function(value, *args, **kwargs)`` to every value.

        Raises:
            ChildProcessError: a call raised; the original exception is chained.
        """
        self._terminate = False
        self._exception_err = None
        for indx, value in enumerate(values):
            if not self._create_task(function, value, indx, *args, **kwargs):
                break
        results = self._get_response()
        if self._terminate:
            self._terminate = False
            err = self._exception_err
            raise ChildProcessError(f"Error on task item {self._failed_index}: {err}") from err
        return results

    def wait_for_available_thread(self):
        with self._thread_available:
            while self._active_threads >= self.max_threads:
                self._thread_available.wait()

    def _execute_function_thread(self, function, value, indx, args, kwargs):
        try:
            if not self._terminate:
                self._store_response((indx, function(value, *args, **kwargs)))
        except Exception as e:
            logger.error(f"Error encountered in thread: {e}")
            with self._lock:
                if not self._terminate:
                    self._failed_index = indx
                    self._exception_err = e
                self._terminate = True
        finally:
            with self._thread_available:
                self._active_threads -= 1
                self._thread_available.notify()
