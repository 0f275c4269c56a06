"""Async utility functions for batch processing."""

import asyncio
from typing import Any, Callable, Coroutine, List, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


async def gather_in_batches(
    tasks: List[Coroutine[Any, Any, T]], batch_size: int
) -> List[T]:
    """
    Execute async tasks in batches and return all results.

    Args:
        tasks: List of coroutines to execute
        batch_size: Number of tasks to run concurrently

    Returns:
        List of results from all tasks in the same order
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    results: List[T] = []

    for i in range(0, len(tasks), batch_size):
        batch = tasks[i : i + batch_size]
        batch_results = await asyncio.gather(*batch)
        results.extend(batch_results)

    return results


async def map_in_threads(
    func: Callable[[T], R], items: Sequence[T], max_workers: int
) -> List[R]:
    """
    Apply a blocking function to every item on worker threads.

    At most max_workers calls run at once and results keep the input order,
    so the outcome does not depend on max_workers.
    """
    if max_workers <= 1:
        return [func(item) for item in items]
    tasks = [asyncio.to_thread(func, item) for item in items]
    return await gather_in_batches(tasks, max_workers)
