"""
Parallel replicate runner.

Architecture:
- Each replicate (bootstrap resample, CV fold, simulation replicate) is an
  independent job with no shared mutable state
- A semaphore bounds concurrent jobs to max_workers
- CPU-bound numpy work runs in worker threads via asyncio.to_thread
- Results come back in submission order, so aggregates do not depend on
  completion order
"""

import asyncio
import logging
import time
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Sequence

from tqdm import tqdm

from config import RUNTIME_CONFIG

logger = logging.getLogger("flode.parallel")


# =============================================================================
# DATA CLASSES
# =============================================================================

@dataclass
class ReplicateResult:
    """Result of one replicate job"""
    index: int
    success: bool = False
    value: Any = None
    error: Optional[str] = None
    elapsed: float = 0.0


# =============================================================================
# PARALLEL RUNNER
# =============================================================================

class ParallelRunner:
    """
    Runs a function over a batch of items with bounded concurrency.

    Failures are captured per item in ReplicateResult instead of raising;
    callers decide how many failures are acceptable.
    """

    def __init__(self, max_workers: Optional[int] = None, desc: str = "replicates",
                 progress: Optional[bool] = None):
        self.max_workers = max_workers or RUNTIME_CONFIG["max_workers"]
        self.desc = desc
        self.progress = RUNTIME_CONFIG["progress"] if progress is None else progress

    async def run_batch(
        self,
        fn: Callable[[Any], Any],
        items: Sequence[Any],
        progress_callback: Optional[Callable[[int, int], None]] = None
    ) -> List[ReplicateResult]:
        """
        Apply fn to every item concurrently.

        Args:
            fn: Pure function of one item
            items: Work items, one per replicate
            progress_callback: Optional callback(completed, total)

        Returns:
            One ReplicateResult per item, in input order
        """
        total = len(items)
        if total == 0:
            return []

        start_time = time.time()
        completed = 0
        semaphore = asyncio.Semaphore(self.max_workers)
        bar = tqdm(total=total, desc=self.desc, disable=not self.progress, leave=False)

        async def process_one(index: int, item: Any) -> ReplicateResult:
            nonlocal completed

            async with semaphore:
                t0 = time.time()
                try:
                    value = await asyncio.to_thread(fn, item)
                    result = ReplicateResult(index=index, success=True, value=value)
                except Exception as e:
                    logger.warning(f"   ⚠️ {self.desc} #{index} failed: {e}")
                    result = ReplicateResult(index=index, error=str(e)[:200])
                result.elapsed = time.time() - t0

                completed += 1
                bar.update(1)
                if progress_callback:
                    progress_callback(completed, total)
                return result

        try:
            results = await asyncio.gather(*(process_one(i, item) for i, item in enumerate(items)))
        finally:
            bar.close()

        elapsed = time.time() - start_time
        success_count = sum(1 for r in results if r.success)
        logger.info(f"📊 {self.desc}: {success_count}/{total} succeeded | {elapsed:.1f}s | {self.max_workers} workers")
        return list(results)

    def run(self, fn: Callable[[Any], Any], items: Sequence[Any],
            progress_callback: Optional[Callable[[int, int], None]] = None) -> List[ReplicateResult]:
        """Blocking wrapper around run_batch"""
        return asyncio.run(self.run_batch(fn, items, progress_callback))


def run_replicates(fn: Callable[[Any], Any], items: Sequence[Any], max_workers: Optional[int] = None,
                   desc: str = "replicates") -> List[ReplicateResult]:
    return ParallelRunner(max_workers=max_workers, desc=desc).run(fn, items)
