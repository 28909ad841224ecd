"""Thread pool for independent jobs, driven by anyio and returned in job order."""

from __future__ import annotations

import logging
import os
from collections.abc import Callable, Sequence
from typing import TypeVar

import anyio
import anyio.to_thread

logger = logging.getLogger(__name__)

J = TypeVar("J")
R = TypeVar("R")


def default_workers() -> int:
    """Logical cores minus one, at least one."""
    return max(1, (os.cpu_count() or 1) - 1)


def map_jobs(fn: Callable[[J], R], jobs: Sequence[J], workers: int = 1) -> list[R]:
    """Run ``fn`` over ``jobs`` on up to ``workers`` threads.

    Results are ordered like ``jobs``. Jobs must not share mutable state; every job
    derives its randomness from its own index, so the output does not depend on
    ``workers``.
    """
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]

    results: list[R | None] = [None] * len(jobs)

    async def _run_all() -> None:
        limiter = anyio.CapacityLimiter(workers)

        async def _run(index: int, job: J) -> None:
            results[index] = await anyio.to_thread.run_sync(fn, job, limiter=limiter)

        async with anyio.create_task_group() as tg:
            for index, job in enumerate(jobs):
                tg.start_soon(_run, index, job)

    logger.debug("Running %d jobs on %d workers", len(jobs), workers)
    anyio.run(_run_all)
    return results  # type: ignore[return-value]
