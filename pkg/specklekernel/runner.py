"""Deterministic job runner over a thread pool."""

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


def run_jobs(
    jobs: Sequence[Callable[[], T]],
    workers: int = 1,
    label: str = "jobs",
    on_result: Callable[[int, T], None] | None = None,
) -> list[T]:
    """Run independent zero-argument jobs and return results in job order.

    numpy and BLAS release the GIL, so threads give real parallelism for the
    block computations dispatched here. Results are placed by submission
    index, so the returned list never depends on completion order.

    Args:
        jobs: Callables taking no arguments.
        workers: Maximum number of threads; 1 runs inline.
        label: Name used in log messages.
        on_result: Optional callback ``(index, result)`` fired as each job
            completes, used to keep partial results on interruption.

    Returns:
        List of job results, ``results[i]`` from ``jobs[i]``.

    Raises:
        Whatever a job raises; pending jobs are cancelled first. A
        KeyboardInterrupt while waiting cancels pending jobs and propagates.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if not jobs:
        return []

    logger.debug(f"Running {len(jobs)} {label} on {workers} worker(s)")

    if workers == 1 or len(jobs) == 1:
        results = []
        for i, job in enumerate(jobs):
            result = job()
            if on_result is not None:
                on_result(i, result)
            results.append(result)
        return results

    results: list = [None] * len(jobs)
    pool = ThreadPoolExecutor(
        max_workers=min(workers, len(jobs)), thread_name_prefix="specklekernel"
    )
    futures = {pool.submit(job): i for i, job in enumerate(jobs)}
    try:
        for future in as_completed(futures):
            index = futures[future]
            results[index] = future.result()
            if on_result is not None:
                on_result(index, results[index])
    except BaseException as e:
        logger.debug(f"Cancelling pending {label} after {type(e).__name__}")
        pool.shutdown(wait=False, cancel_futures=True)
        raise
    pool.shutdown(wait=True)
    return results
