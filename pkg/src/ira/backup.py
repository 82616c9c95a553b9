"""Backup-side engine: hint decoding, source-routed sorted batch prefetching,
pipelined replay from a crash-on-miss cache, and the cross-block-LRU baseline.

Prefetching merges the hints of a batch of blocks into sorted fetch lists and
routes each entry by its source byte:

* plain keys: one forward cursor walk over the plain storage table
* zero keys: filled with the zero word, no I/O
* change-set keys: resolved per (key, block) through the full historical
  lookup (these depend on the block being replayed, so they never merge
  across blocks)
* accounts: resolved as of each block via three sorted walks (history index,
  change-set fetches ordered by (block, address), plain fetches); account
  values change from block to block, so plain-table shortcuts would corrupt
  replay
* codes: sorted walks over the account and bytecode tables (bytecode is
  immutable, so the plain tables are authoritative at any block)

With ``workers = k`` each fetch list is split into ``min(k, io_lanes)``
contiguous ranges and the category's wall cost is its heaviest range; the
batch wall cost is the sum of the category walls.

The pipeline is simulated on a virtual integer clock by a single coordinator
(one producer prefetching batches, one consumer executing blocks, connected
by a bounded queue), so results are independent of host scheduling. Warm-up
blocks bypass the queue, bounded by a buffer entry budget.
"""

from __future__ import annotations

import csv
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .store import (
    Account,
    ArchivalStore,
    CostMeter,
    CostModel,
    Effects,
    StorageKey,
    StoreView,
    ZERO_WORD,
    charge_parallel,
)
from .primary import (
    Hint,
    HintDb,
    HintIntegrityError,
    Source,
    decompress_hint,
    parse_hint,
    state_change_hash,
)
from .workload import Block, execute_block


class CacheMissError(Exception):
    """Replay touched a key its hint did not cover; execution halts."""

    def __init__(self, domain: str, key: bytes, block_number: int):
        self.domain = domain
        self.key = bytes(key)
        self.block_number = block_number
        super().__init__(f"block {block_number}: uncovered {domain} key {self.key.hex()}")


class PrefetchError(Exception):
    """The store could not serve a prefetch plan (caller should fall back)."""


class BlockCache:
    """Per-block replay cache. With ``crash_on_miss`` set, any lookup outside
    the prefetched key set halts replay naming the key; the cache is discarded
    once its block has executed."""

    __slots__ = ("block_number", "storage", "accounts", "codes", "crash_on_miss", "miss_count")

    def __init__(self, block_number: int, crash_on_miss: bool = True):
        self.block_number = block_number
        self.storage: Dict[StorageKey, bytes] = {}
        self.accounts: Dict[bytes, Optional[Account]] = {}
        self.codes: Dict[bytes, Optional[bytes]] = {}
        self.crash_on_miss = crash_on_miss
        self.miss_count = 0

    def get_storage(self, key: StorageKey) -> bytes:
        try:
            return self.storage[key]
        except KeyError:
            if self.crash_on_miss:
                raise CacheMissError("storage", key, self.block_number) from None
            self.miss_count += 1
            return ZERO_WORD

    def get_account(self, address: bytes) -> Optional[Account]:
        try:
            return self.accounts[address]
        except KeyError:
            if self.crash_on_miss:
                raise CacheMissError("account", address, self.block_number) from None
            self.miss_count += 1
            return None

    def get_code(self, address: bytes) -> Optional[bytes]:
        try:
            return self.codes[address]
        except KeyError:
            if self.crash_on_miss:
                raise CacheMissError("code", address, self.block_number) from None
            self.miss_count += 1
            return None


@dataclass
class PrefetchPlan:
    """Merged, deduplicated fetch lists for one batch of hints.

    Every (key, source) entry of every hint lands in exactly one route;
    change-set and account fetches keep their block number because their
    values are block-dependent.
    """

    blocks: List[int]
    per_block: Dict[int, Hint]
    plain_keys: List[StorageKey]
    zero_keys: List[StorageKey]
    changeset_pairs: List[Tuple[StorageKey, int]]
    account_pairs: List[Tuple[bytes, int]]
    code_addrs: List[bytes]

    @property
    def batch_block_range(self) -> Tuple[int, int]:
        return (self.blocks[0], self.blocks[-1]) if self.blocks else (0, 0)

    def entry_count(self, block_number: int) -> int:
        hint = self.per_block[block_number]
        return hint.entry_count()


def plan_prefetch(hints: Sequence[Hint]) -> PrefetchPlan:
    """Merge a batch of decoded hints into sorted, routed fetch lists."""
    plain: Set[StorageKey] = set()
    zero: Set[StorageKey] = set()
    cs_pairs: Set[Tuple[StorageKey, int]] = set()
    acct_pairs: Set[Tuple[bytes, int]] = set()
    codes: Set[bytes] = set()
    per_block: Dict[int, Hint] = {}
    for hint in hints:
        per_block[hint.block_number] = hint
        b = hint.block_number
        for key, src in hint.storage_entries:
            if src == Source.PLAIN:
                plain.add(key)
            elif src == Source.ZERO:
                zero.add(key)
            else:
                cs_pairs.add((key, b))
        for addr in hint.accounts:
            acct_pairs.add((addr, b))
        codes.update(hint.codes)
    return PrefetchPlan(
        blocks=sorted(per_block),
        per_block=per_block,
        plain_keys=sorted(plain),
        zero_keys=sorted(zero),
        changeset_pairs=sorted(cs_pairs),
        account_pairs=sorted(acct_pairs),
        code_addrs=sorted(codes),
    )


def _chunks(items: Sequence, lanes: int) -> List[Sequence]:
    if not items:
        return []
    j = min(lanes, len(items))
    base, extra = divmod(len(items), j)
    out = []
    idx = 0
    for i in range(j):
        cnt = base + (1 if i < extra else 0)
        out.append(items[idx : idx + cnt])
        idx += cnt
    return out


def _walk_cost(n: int, model: CostModel) -> int:
    if n <= 0:
        return 0
    return model.c_random_seek + (n - 1) * model.c_sequential_step


@dataclass
class PrefetchResult:
    caches: Dict[int, BlockCache]
    wall_cost: int
    per_block_cost: Dict[int, int]


def prefetch(
    plan: PrefetchPlan,
    store: ArchivalStore,
    workers: int = 1,
    crash_on_miss: bool = True,
) -> PrefetchResult:
    """Fetch everything a batch needs and assemble one cache per block.

    Each block's cache receives exactly the keys its own hint listed, with
    values routed per that hint's sources.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    model = store.cost_model
    lanes = min(workers, model.io_lanes)
    wall = 0

    plain_vals: Dict[StorageKey, bytes] = {}
    category = 0
    for chunk in _chunks(plan.plain_keys, lanes):
        cost = _walk_cost(len(chunk), model)
        category = max(category, cost)
        for key in chunk:
            value = store.plain_storage.get(key)
            if value is None:
                raise PrefetchError(f"plain-routed key missing from plain storage: {key.hex()}")
            plain_vals[key] = value
    wall += category

    cs_vals: Dict[Tuple[StorageKey, int], bytes] = {}
    category = 0
    for chunk in _chunks(plan.changeset_pairs, lanes):
        meter = CostMeter(model)
        for key, block in chunk:
            cs_vals[(key, block)] = store.read_as_of(key, block, meter)
        category = max(category, meter.total)
    wall += category

    # accounts: history consult over unique addresses, then block-dependent
    # resolution via sorted change-set and plain walks
    acct_vals: Dict[Tuple[bytes, int], Optional[Account]] = {}
    unique_addrs = sorted({addr for addr, _ in plan.account_pairs})
    category = 0
    for chunk in _chunks(unique_addrs, lanes):
        category = max(category, _walk_cost(len(chunk), model))
    wall += category

    cs_fetches: List[Tuple[int, bytes, int]] = []  # (mod block, addr, asof block)
    plain_addr_set: Set[bytes] = set()
    for addr, block in plan.account_pairs:
        n = store.account_history.first_at_or_after(addr, block)
        if n is not None:
            cs_fetches.append((n, addr, block))
        elif addr in store.plain_accounts:
            plain_addr_set.add(addr)
            acct_vals[(addr, block)] = store.plain_accounts[addr]
        else:
            acct_vals[(addr, block)] = None

    cs_fetches.sort()
    category = 0
    for chunk in _chunks(cs_fetches, lanes):
        category = max(category, _walk_cost(len(chunk), model))
        for n, addr, block in chunk:
            acct_vals[(addr, block)] = store.account_changesets[n][addr]
    wall += category

    category = 0
    for chunk in _chunks(sorted(plain_addr_set), lanes):
        category = max(category, _walk_cost(len(chunk), model))
    wall += category

    # codes: bytecode is immutable, so plain account and bytecode tables are
    # authoritative for any block
    code_vals: Dict[bytes, Optional[bytes]] = {}
    hashes: Set[bytes] = set()
    category = 0
    for chunk in _chunks(plan.code_addrs, lanes):
        category = max(category, _walk_cost(len(chunk), model))
        for addr in chunk:
            acc = store.plain_accounts.get(addr)
            if acc is None or acc.code_hash is None:
                code_vals[addr] = None
            else:
                hashes.add(acc.code_hash)
    wall += category
    hash_list = sorted(hashes)
    hash_code: Dict[bytes, bytes] = {}
    category = 0
    for chunk in _chunks(hash_list, lanes):
        category = max(category, _walk_cost(len(chunk), model))
        for ch in chunk:
            code = store.bytecodes.get(ch)
            if code is None:
                raise PrefetchError(f"bytecode missing for hash {ch.hex()}")
            hash_code[ch] = code
    wall += category
    for addr in plan.code_addrs:
        if addr not in code_vals:
            acc = store.plain_accounts.get(addr)
            code_vals[addr] = hash_code[acc.code_hash] if acc and acc.code_hash else None

    caches: Dict[int, BlockCache] = {}
    per_block_cost: Dict[int, int] = {}
    total_entries = sum(plan.entry_count(b) for b in plan.blocks) or 1
    remainder = wall
    for i, b in enumerate(plan.blocks):
        hint = plan.per_block[b]
        cache = BlockCache(b, crash_on_miss)
        for key, src in hint.storage_entries:
            if src == Source.PLAIN:
                cache.storage[key] = plain_vals[key]
            elif src == Source.ZERO:
                cache.storage[key] = ZERO_WORD
            else:
                cache.storage[key] = cs_vals[(key, b)]
        for addr in hint.accounts:
            cache.accounts[addr] = acct_vals[(addr, b)]
        for addr in hint.codes:
            cache.codes[addr] = code_vals[addr]
        caches[b] = cache
        if i == len(plan.blocks) - 1:
            share = remainder
        else:
            share = wall * plan.entry_count(b) // total_entries
        per_block_cost[b] = share
        remainder -= share
    return PrefetchResult(caches=caches, wall_cost=wall, per_block_cost=per_block_cost)


@dataclass
class ReplayBlockResult:
    block_number: int
    effects: Effects
    digest: bytes
    t_exec: int


def replay_block(block: Block, cache: BlockCache, cost_model: CostModel) -> ReplayBlockResult:
    """Execute a block entirely from its prefetched cache.

    All reads are served at hit cost; a miss halts immediately (the cache
    refuses to fall back to the store)."""
    meter = CostMeter(cost_model)
    result = execute_block(block, cache, meter)
    return ReplayBlockResult(
        block_number=block.number,
        effects=result.effects,
        digest=state_change_hash(result.effects),
        t_exec=meter.total,
    )


# -- pipeline ---------------------------------------------------------------------


@dataclass
class PipelineConfig:
    batch_size: int = 32
    channel_capacity: int = 100
    warmup_blocks: int = 3000
    warmup_buffer_entries: int = 134_217_728  # 8 GiB at ~64 bytes per entry
    workers: int = 1
    crash_on_miss: bool = True

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.channel_capacity < self.batch_size:
            raise ValueError("channel_capacity must be >= batch_size (deadlock guard)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.warmup_blocks < 0 or self.warmup_buffer_entries < 0:
            raise ValueError("warm-up sizes must be non-negative")


@dataclass
class BlockMetrics:
    block: int
    t_wait: int
    t_exec: int
    prefetch_cost: int
    miss_count: int
    hint_raw_bytes: int
    hint_compressed_bytes: int
    fallback: bool
    digest: bytes


@dataclass
class ReplayMetrics:
    rows: List[BlockMetrics]
    wall_cost: int
    prefetch_total: int
    exec_total: int
    wait_total: int
    fallback_blocks: int
    corrupt_hints: int
    config: PipelineConfig

    def digests(self) -> Dict[int, bytes]:
        return {r.block: r.digest for r in self.rows}

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(
                [
                    "block",
                    "t_wait",
                    "t_exec",
                    "prefetch_cost",
                    "miss_count",
                    "hint_raw_bytes",
                    "hint_compressed_bytes",
                    "fallback",
                    "digest",
                ]
            )
            for r in self.rows:
                w.writerow(
                    [
                        r.block,
                        r.t_wait,
                        r.t_exec,
                        r.prefetch_cost,
                        r.miss_count,
                        r.hint_raw_bytes,
                        r.hint_compressed_bytes,
                        int(r.fallback),
                        r.digest.hex(),
                    ]
                )


@dataclass
class _BatchTask:
    blocks: List[Block]
    hints: List[Hint]
    fallback_blocks: Set[int]
    raw_sizes: Dict[int, int]
    comp_sizes: Dict[int, int]


def _decode_batch(batch: List[Block], hint_db: Optional[HintDb]) -> Tuple[_BatchTask, int]:
    """Decode the batch's hints; blocks with missing or corrupt hints are
    marked for the unhinted fallback path."""
    hints: List[Hint] = []
    fallback: Set[int] = set()
    raw_sizes: Dict[int, int] = {}
    comp_sizes: Dict[int, int] = {}
    corrupt = 0
    for block in batch:
        data = None
        if hint_db is not None:
            try:
                data = hint_db.read_hint(block.number)
            except HintIntegrityError:
                corrupt += 1
                data = None
        if data is None:
            fallback.add(block.number)
            continue
        try:
            raw = decompress_hint(data)
            hint = parse_hint(raw)
        except HintIntegrityError:
            corrupt += 1
            fallback.add(block.number)
            continue
        raw_sizes[block.number] = len(raw)
        comp_sizes[block.number] = len(data)
        hints.append(hint)
    return _BatchTask(batch, hints, fallback, raw_sizes, comp_sizes), corrupt


def pipeline_run(
    blocks: Iterable[Block],
    store: ArchivalStore,
    hint_db: Optional[HintDb],
    config: Optional[PipelineConfig] = None,
) -> ReplayMetrics:
    """Replay a block range through the prefetcher/executor pipeline on a
    simulated clock.

    Per block, ``t_wait`` is how long the executor stalled before the block's
    cache was ready (a stalled batch charges its wait to the batch's first
    block; later blocks of the batch are already ready when the executor gets
    to them). Missing or corrupt hints degrade that block to direct execution
    against the store, flagged in its row.
    """
    config = config or PipelineConfig()
    config.validate()
    model = store.cost_model
    block_list = list(blocks)
    n = len(block_list)
    if n == 0:
        return ReplayMetrics([], 0, 0, 0, 0, 0, 0, config)

    batches = [block_list[i : i + config.batch_size] for i in range(0, n, config.batch_size)]
    corrupt_total = 0

    # Warm-up: prefetch leading batches in parallel, bounded by block count
    # and the buffer entry budget; these bypass the bounded channel.
    warmup_tasks: List[Tuple[_BatchTask, PrefetchResult]] = []
    warmup_costs: List[int] = []
    warmup_entries = 0
    warmup_batches = 0
    warmup_blocks_count = 0
    for batch in batches:
        if warmup_blocks_count + len(batch) > min(config.warmup_blocks, n):
            break
        task, corrupt = _decode_batch(batch, hint_db)
        corrupt_total += corrupt
        plan = plan_prefetch(task.hints)
        entries = sum(plan.entry_count(b) for b in plan.blocks)
        if warmup_entries + entries > config.warmup_buffer_entries and warmup_batches > 0:
            break
        pf = prefetch(plan, store, workers=1, crash_on_miss=config.crash_on_miss)
        warmup_tasks.append((task, pf))
        warmup_costs.append(pf.wall_cost)
        warmup_entries += entries
        warmup_blocks_count += len(batch)
        warmup_batches += 1

    warmup_wall = charge_parallel(warmup_costs, config.workers, model)
    prefetch_total = sum(warmup_costs)

    # Assemble the executor's input queue state: (block, ready_time hint,
    # cache or None, batch prefetch share, sizes, fallback?, steady batch id)
    ready_time: List[int] = [0] * n
    cache_of: List[Optional[BlockCache]] = [None] * n
    pf_share: List[int] = [0] * n
    raw_of: List[int] = [0] * n
    comp_of: List[int] = [0] * n
    fb_of: List[bool] = [False] * n
    steady_flag: List[bool] = [False] * n

    idx = 0
    for task, pf in warmup_tasks:
        for block in task.blocks:
            b = block.number
            ready_time[idx] = warmup_wall
            fb = b in task.fallback_blocks
            fb_of[idx] = fb
            if not fb:
                cache_of[idx] = pf.caches[b]
                pf_share[idx] = pf.per_block_cost.get(b, 0)
                raw_of[idx] = task.raw_sizes.get(b, 0)
                comp_of[idx] = task.comp_sizes.get(b, 0)
            idx += 1

    steady_batches = batches[warmup_batches:]

    # Co-simulation: single coordinator advancing producer and consumer on one
    # virtual clock. The producer may only start a batch when the channel has
    # room; channel occupancy counts steady blocks produced but not yet taken
    # by the executor.
    prod_free = warmup_wall
    exec_free = 0
    next_exec = 0
    produced_upto = idx - 1
    produced_steady = 0
    started_steady = 0
    steady_start_times: List[int] = []
    next_batch = 0

    rows: List[BlockMetrics] = [None] * n  # type: ignore[list-item]
    exec_total = 0
    wait_total = 0
    fallback_count = 0

    def execute_next() -> None:
        nonlocal next_exec, exec_free, exec_total, wait_total, started_steady, fallback_count
        i = next_exec
        block = block_list[i]
        start = max(exec_free, ready_time[i])
        wait = start - exec_free
        if steady_flag[i]:
            started_steady += 1
            steady_start_times.append(start)
        misses = 0
        if fb_of[i]:
            fallback_count += 1
            meter = CostMeter(model)
            result = execute_block(block, StoreView(store, block.number, meter), meter)
            t_exec = meter.total
            digest = state_change_hash(result.effects)
        else:
            cache = cache_of[i]
            rb = replay_block(block, cache, model)
            t_exec = rb.t_exec
            digest = rb.digest
            misses = cache.miss_count
            cache_of[i] = None  # memory discipline: cache dies with its block
        exec_free = start + t_exec
        exec_total += t_exec
        wait_total += wait
        rows[i] = BlockMetrics(
            block=block.number,
            t_wait=wait,
            t_exec=t_exec,
            prefetch_cost=pf_share[i],
            miss_count=misses,
            hint_raw_bytes=raw_of[i],
            hint_compressed_bytes=comp_of[i],
            fallback=fb_of[i],
            digest=digest,
        )
        next_exec += 1

    def producer_can_start() -> bool:
        nb = len(steady_batches[next_batch])
        return produced_steady + nb - config.channel_capacity <= started_steady

    def produce_next_batch() -> None:
        nonlocal next_batch, produced_upto, produced_steady, prod_free, prefetch_total, corrupt_total
        batch = steady_batches[next_batch]
        need_started = produced_steady + len(batch) - config.channel_capacity
        room_time = steady_start_times[need_started - 1] if need_started > 0 else 0
        task, corrupt = _decode_batch(batch, hint_db)
        corrupt_total += corrupt
        plan = plan_prefetch(task.hints)
        pf = prefetch(plan, store, workers=config.workers, crash_on_miss=config.crash_on_miss)
        done = max(prod_free, room_time) + pf.wall_cost
        prod_free = done
        prefetch_total += pf.wall_cost
        for block in task.blocks:
            b = block.number
            produced_upto += 1
            i = produced_upto
            ready_time[i] = done
            steady_flag[i] = True
            produced_steady += 1
            fb = b in task.fallback_blocks
            fb_of[i] = fb
            if not fb:
                cache_of[i] = pf.caches[b]
                pf_share[i] = pf.per_block_cost.get(b, 0)
                raw_of[i] = task.raw_sizes.get(b, 0)
                comp_of[i] = task.comp_sizes.get(b, 0)
        next_batch += 1

    while next_batch < len(steady_batches) or next_exec < n:
        if next_exec <= produced_upto:
            # producer runs ahead while the bounded channel has room
            if next_batch < len(steady_batches) and producer_can_start():
                produce_next_batch()
            else:
                execute_next()
        else:
            # executor is starving; capacity >= batch size guarantees room
            if next_batch >= len(steady_batches) or not producer_can_start():
                raise AssertionError("pipeline deadlock")
            produce_next_batch()

    return ReplayMetrics(
        rows=rows,
        wall_cost=exec_free,
        prefetch_total=prefetch_total,
        exec_total=exec_total,
        wait_total=wait_total,
        fallback_blocks=fallback_count,
        corrupt_hints=corrupt_total,
        config=config,
    )


# -- baseline ---------------------------------------------------------------------


@dataclass
class BaselineCacheConfig:
    """Cross-block LRU capacities (entries) for the unhinted baseline."""

    accounts: int = 100_000
    storage: int = 1_000_000
    codes: int = 10_000


class _LruMap:
    __slots__ = ("capacity", "_data")

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._data: OrderedDict = OrderedDict()

    def get(self, key):
        data = self._data
        if key in data:
            data.move_to_end(key)
            return data[key]
        return None

    def __contains__(self, key) -> bool:
        return key in self._data

    def put(self, key, value) -> None:
        data = self._data
        if key in data:
            data.move_to_end(key)
        data[key] = value
        if len(data) > self.capacity:
            data.popitem(last=False)

    def __len__(self) -> int:
        return len(self._data)


_ABSENT = object()


class BaselineView:
    """Read-through view for the unhinted baseline: misses fall from the
    cross-block LRU to the store's full historical lookup and are inserted
    back into the LRU."""

    __slots__ = ("store", "block_number", "meter", "lru_storage", "lru_accounts", "lru_codes")

    def __init__(self, store, block_number, meter, lru_storage, lru_accounts, lru_codes):
        self.store = store
        self.block_number = block_number
        self.meter = meter
        self.lru_storage = lru_storage
        self.lru_accounts = lru_accounts
        self.lru_codes = lru_codes

    def get_storage(self, key: StorageKey) -> bytes:
        value = self.lru_storage.get(key)
        if value is None:
            value = self.store.read_as_of(key, self.block_number, self.meter)
            self.lru_storage.put(key, value)
        return value

    def get_account(self, address: bytes) -> Optional[Account]:
        acc = self.lru_accounts.get(address)
        if acc is None:
            acc = self.store.account_as_of(address, self.block_number, self.meter)
            self.lru_accounts.put(address, acc if acc is not None else _ABSENT)
        elif acc is _ABSENT:
            return None
        return acc

    def get_code(self, address: bytes) -> Optional[bytes]:
        code = self.lru_codes.get(address)
        if code is None:
            code = self.store.code_as_of(address, self.block_number, self.meter)
            self.lru_codes.put(address, code if code is not None else _ABSENT)
        elif code is _ABSENT:
            return None
        return code


@dataclass
class BaselineBlockMetrics:
    block: int
    t_baseline: int
    ops: int
    reads: int
    io_cost: int
    digest: bytes


@dataclass
class BaselineMetrics:
    rows: List[BaselineBlockMetrics]
    total_cost: int
    io: int
    hit: int
    compute: int

    @property
    def io_fraction(self) -> float:
        return self.io / self.total_cost if self.total_cost else 0.0

    def digests(self) -> Dict[int, bytes]:
        return {r.block: r.digest for r in self.rows}

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["block", "t_baseline", "ops", "reads", "io_cost", "digest"])
            for r in self.rows:
                w.writerow([r.block, r.t_baseline, r.ops, r.reads, r.io_cost, r.digest.hex()])


def run_baseline(
    blocks: Iterable[Block],
    store: ArchivalStore,
    cache_config: Optional[BaselineCacheConfig] = None,
) -> BaselineMetrics:
    """Sequentially execute blocks through a per-block cache backed by a
    cross-block LRU; after each block the touched state is in the LRU (reads
    are inserted on fetch, writes merged from the block's effects)."""
    cfg = cache_config or BaselineCacheConfig()
    model = store.cost_model
    lru_s = _LruMap(cfg.storage)
    lru_a = _LruMap(cfg.accounts)
    lru_c = _LruMap(cfg.codes)
    rows: List[BaselineBlockMetrics] = []
    total_io = total_hit = total_compute = 0
    for block in blocks:
        meter = CostMeter(model)
        view = BaselineView(store, block.number, meter, lru_s, lru_a, lru_c)
        result = execute_block(block, view, meter)
        for key, value in result.effects.storage.items():
            lru_s.put(key, value)
        for addr, acc in result.effects.accounts.items():
            lru_a.put(addr, acc)
        rows.append(
            BaselineBlockMetrics(
                block=block.number,
                t_baseline=meter.total,
                ops=result.op_count,
                reads=result.read_count,
                io_cost=meter.io,
                digest=state_change_hash(result.effects),
            )
        )
        total_io += meter.io
        total_hit += meter.hit
        total_compute += meter.compute
    return BaselineMetrics(
        rows=rows,
        total_cost=total_io + total_hit + total_compute,
        io=total_io,
        hit=total_hit,
        compute=total_compute,
    )
