"""
workers.py - Thread pool sizing and ordered parallel map

The worker count comes from GLR_THREADS (0 or unset = one worker per CPU). Results are
always returned in submission order so outputs never depend on the worker count.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from dotenv import load_dotenv

from ..config import THREADS_ENV

load_dotenv()

T = TypeVar("T")
R = TypeVar("R")


def worker_count(override: Optional[int] = None) -> int:
    """Number of threads to use; an explicit override wins over the environment."""
    if override is None:
        raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
        try:
            override = int(raw)
        except ValueError:
            override = 0
    if override <= 0:
        return os.cpu_count() or 1
    return override


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """Applies fn to every item, concurrently when more than one worker is allowed."""
    items = list(items)
    max_workers = min(worker_count(workers), max(len(items), 1))
    if max_workers <= 1:
        return [fn(item) for item in items]

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        return list(executor.map(fn, items))
