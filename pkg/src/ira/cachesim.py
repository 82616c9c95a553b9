"""Offline cache-policy simulator: LRU, future-knowledge-optimal (MIN), and an
exhaustive optimality oracle for small instances.

Keys are opaque: anything hashable and mutually comparable works. Eviction
decisions are fully deterministic; when several cached keys are equally good
eviction candidates under the optimal policy, the largest key in sort order is
evicted so the eviction log is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

BRUTE_FORCE_MAX_LEN = 14

_INF = float("inf")


@dataclass
class SimResult:
    misses: int
    hits: int
    eviction_log: List[Tuple[int, Hashable]] = field(default_factory=list)

    @property
    def accesses(self) -> int:
        return self.misses + self.hits


def _check_capacity(capacity: int) -> None:
    if capacity < 1:
        raise ValueError("cache capacity must be >= 1")


def simulate_lru(
    trace: Sequence[Hashable],
    capacity: int,
    init: Optional[Iterable[Hashable]] = None,
) -> SimResult:
    """Least-recently-used simulation; ``init`` pre-warms the cache in order
    (the first init entry is the least recently used)."""
    _check_capacity(capacity)
    recency: Dict[Hashable, int] = {}
    clock = 0
    for key in init or ():
        recency[key] = clock
        clock += 1
    if len(recency) > capacity:
        raise ValueError("initial contents exceed capacity")

    result = SimResult(0, 0)
    for step, key in enumerate(trace):
        if key in recency:
            result.hits += 1
        else:
            result.misses += 1
            if len(recency) >= capacity:
                victim = min(recency, key=lambda k: recency[k])
                del recency[victim]
                result.eviction_log.append((step, victim))
        recency[key] = clock
        clock += 1
    return result


def _next_use_indices(trace: Sequence[Hashable]) -> List[float]:
    """next_use[i] = index of the next access to trace[i] after i, or inf."""
    next_use: List[float] = [0.0] * len(trace)
    last_seen: Dict[Hashable, int] = {}
    for i in range(len(trace) - 1, -1, -1):
        key = trace[i]
        next_use[i] = last_seen.get(key, _INF)
        last_seen[key] = i
    return next_use


def simulate_belady(
    trace: Sequence[Hashable],
    capacity: int,
    init: Optional[Iterable[Hashable]] = None,
) -> SimResult:
    """Optimal offline replacement: on eviction, drop the cached key whose next
    access is furthest in the future (never-again keys count as infinitely far;
    ties evict the largest key)."""
    _check_capacity(capacity)
    next_use = _next_use_indices(trace)
    first_use: Dict[Hashable, float] = {}
    for i in range(len(trace) - 1, -1, -1):
        first_use[trace[i]] = i

    cache: Dict[Hashable, float] = {}
    for key in init or ():
        cache[key] = first_use.get(key, _INF)
    if len(cache) > capacity:
        raise ValueError("initial contents exceed capacity")

    result = SimResult(0, 0)
    for step, key in enumerate(trace):
        if key in cache:
            result.hits += 1
        else:
            result.misses += 1
            if len(cache) >= capacity:
                victim = max(cache.items(), key=lambda kv: (kv[1], kv[0]))[0]
                del cache[victim]
                result.eviction_log.append((step, victim))
            cache[key] = 0.0
        cache[key] = next_use[step]
    return result


def brute_force_optimal(
    trace: Sequence[Hashable],
    capacity: int,
    init: Optional[Iterable[Hashable]] = None,
) -> int:
    """Exact minimum miss count over all demand eviction schedules.

    Explores every eviction choice with memoization on (position, cache
    contents). Refuses traces longer than ``BRUTE_FORCE_MAX_LEN``.
    """
    _check_capacity(capacity)
    if len(trace) > BRUTE_FORCE_MAX_LEN:
        raise ValueError(f"brute force limited to traces of length <= {BRUTE_FORCE_MAX_LEN}")
    start = frozenset(init or ())
    if len(start) > capacity:
        raise ValueError("initial contents exceed capacity")
    trace = tuple(trace)

    @lru_cache(maxsize=None)
    def best(i: int, cache: frozenset) -> int:
        if i == len(trace):
            return 0
        key = trace[i]
        if key in cache:
            return best(i + 1, cache)
        if len(cache) < capacity:
            return 1 + best(i + 1, cache | {key})
        return 1 + min(best(i + 1, (cache - {victim}) | {key}) for victim in cache)

    try:
        return best(0, start)
    finally:
        best.cache_clear()


def compare_policies(
    trace: Sequence[Hashable],
    capacity: int,
    init: Optional[Iterable[Hashable]] = None,
) -> Dict[str, object]:
    """Run LRU and the optimal policy on the same trace; report miss counts."""
    lru = simulate_lru(trace, capacity, init)
    opt = simulate_belady(trace, capacity, init)
    return {
        "accesses": len(trace),
        "lru_misses": lru.misses,
        "belady_misses": opt.misses,
        "lru_hits": lru.hits,
        "belady_hits": opt.hits,
        "miss_ratio_lru_over_belady": (lru.misses / opt.misses) if opt.misses else _INF,
        "lru_evictions": lru.eviction_log,
        "belady_evictions": opt.eviction_log,
    }
