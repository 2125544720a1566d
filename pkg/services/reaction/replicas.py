"""Replica pool: independent tasks in parallel, results returned in task order."""
from __future__ import annotations

import logging
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

from joblib import Parallel, delayed
from tqdm import tqdm

from services.reaction.rng import RngStream


logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def chunks(items: Sequence[T], size: int) -> List[Sequence[T]]:
    size = max(1, int(size))
    return [items[i:i + size] for i in range(0, len(items), size)]


def replica_streams(rng: RngStream, label: str, count: int, *point) -> List[RngStream]:
    """Streams keyed by (label, grid point..., replica index)."""
    return [rng.child(label, *point, r) for r in range(int(count))]


def run_replicas(fn: Callable[[T], R], tasks: Iterable[T], threads: int = 1, desc: Optional[str] = None,
                 progress: Optional[Callable[[str, int], None]] = None) -> List[R]:
    """fn over tasks; completion order never changes the returned order."""
    tasks = list(tasks)
    show = desc is not None and logger.isEnabledFor(logging.INFO)
    iterable = tqdm(tasks, desc=desc, disable=not show, leave=False)
    if int(threads) <= 1 or len(tasks) <= 1:
        out = []
        for i, task in enumerate(iterable):
            out.append(fn(task))
            if progress is not None:
                progress(f"{desc or 'replicas'} {i + 1}/{len(tasks)}", int(100 * (i + 1) / len(tasks)))
        return out
    out = Parallel(n_jobs=int(threads), prefer="threads")(delayed(fn)(task) for task in iterable)
    if progress is not None:
        progress(f"{desc or 'replicas'} {len(tasks)}/{len(tasks)}", 100)
    return list(out)
