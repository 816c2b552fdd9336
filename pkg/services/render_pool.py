"""
Render worker pool.

Runs indexed render jobs on a thread pool and yields results in index order
with a bounded number of jobs in flight. Each job computes a pure function of
its index, so results do not depend on the worker count or completion order.
"""

import logging
import threading
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Any, Callable, Deque, Iterable, Iterator, Optional, TypeVar

from core.config import get_config

logger = logging.getLogger(__name__)

T = TypeVar("T")


class RenderPool:
    """Thread pool that renders indexed jobs ahead of consumption."""

    def __init__(self, name: str = "render", max_workers: Optional[int] = None, prefetch: Optional[int] = None):
        settings = get_config().render
        self.name = name
        self.max_workers = max(1, max_workers if max_workers is not None else settings.workers)
        self.prefetch = max(1, prefetch if prefetch is not None else settings.prefetch)
        self._executor: Optional[ThreadPoolExecutor] = None
        self._submitted = 0
        self._failed = 0
        self._lock = threading.Lock()

    def __enter__(self) -> "RenderPool":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.shutdown()

    def _pool(self) -> ThreadPoolExecutor:
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.max_workers, thread_name_prefix=self.name)
            logger.debug(f"Started pool {self.name} with {self.max_workers} workers")
        return self._executor

    def _run(self, func: Callable[[int], T], index: int) -> T:
        try:
            return func(index)
        except Exception as e:
            with self._lock:
                self._failed += 1
            logger.error(f"Render job {index} in pool {self.name} failed: {e}")
            raise

    def ordered_map(self, func: Callable[[int], T], indices: Iterable[int]) -> Iterator[T]:
        """
        Yield func(index) for each index in order.

        At most `prefetch` jobs are queued or running ahead of the consumer.
        A failed job re-raises its exception when its turn comes.
        """
        if self.max_workers == 1:
            for index in indices:
                self._submitted += 1
                yield self._run(func, index)
            return

        pending: Deque[Future] = deque()
        source = iter(indices)
        pool = self._pool()
        exhausted = False
        try:
            while True:
                while not exhausted and len(pending) < self.prefetch:
                    try:
                        index = next(source)
                    except StopIteration:
                        exhausted = True
                        break
                    self._submitted += 1
                    pending.append(pool.submit(self._run, func, index))
                if not pending:
                    return
                yield pending.popleft().result()
        finally:
            for future in pending:
                future.cancel()

    def shutdown(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True, cancel_futures=True)
            self._executor = None
        logger.debug(f"Pool {self.name}: {self._submitted} jobs submitted, {self._failed} failed")
