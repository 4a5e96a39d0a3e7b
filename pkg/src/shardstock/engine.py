"""Apply strategies for a batch of stock deltas.

``memory_serial``
    One thread walks the deltas in stream order. This is the reference
    every other engine is checked against.
``memory_parallel``
    Deltas are routed into one queue per shard, then one thread per shard
    applies its queue. Workers share nothing mutable; counts are summed
    after the join.
``disk_baseline``
    The conventional approach: every delta binary-searches a sorted
    fixed-width file by seeking, rewrites the record in place and forces a
    flush every ``flush_every`` updates.
"""
from __future__ import annotations

import enum
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from shardstock import _kernels as K
from shardstock import codec
from shardstock.core import (
    ApplyReport,
    DeltaBatch,
    Outcome,
    RecordBatch,
    ShardedStore,
    build_store,
    fnv1a_64,
)

log = logging.getLogger(__name__)


class EngineKind(str, enum.Enum):
    MEMORY_SERIAL = "memory_serial"
    MEMORY_PARALLEL = "memory_parallel"
    DISK_BASELINE = "disk_baseline"


class MalformedInputError(ValueError):
    """Too large a share of an input file failed to parse."""


def route_deltas(deltas: DeltaBatch, n: int) -> list[DeltaBatch]:
    """Split ``deltas`` into ``n`` queues by shard, keeping stream order in each."""
    if n < 1:
        raise ValueError(f"shard count must be >= 1, got {n}")
    ids = K.shard_ids(deltas.keys, n)
    order, offsets = K.bucket_order(ids, n)
    return [deltas.take(order[offsets[j]:offsets[j + 1]]) for j in range(n)]


def apply_serial(store: ShardedStore, deltas: DeltaBatch, insert_missing: bool = False) -> ApplyReport:
    t0 = time.perf_counter()
    n = store.shard_count
    shards = store.shards
    counts = [0, 0, 0]
    cols = (deltas.keys.tolist(), deltas.prices.tolist(), deltas.quantities.tolist())
    for key, price, qty in zip(*cols):
        shard = shards[fnv1a_64(b"%013d" % key) % n]
        counts[shard.upsert(key, price, qty, insert_missing)] += 1
    report = ApplyReport()
    report.merge(counts[Outcome.APPLIED], counts[Outcome.MISSING], counts[Outcome.INSERTED])
    report.wall_clock = time.perf_counter() - t0
    return report


def apply_parallel(
    store: ShardedStore, deltas: DeltaBatch, n_workers: int, insert_missing: bool = False
) -> ApplyReport:
    """Apply ``deltas`` with one thread per shard.

    ``store`` must have exactly ``n_workers`` shards. ``wall_clock`` covers
    routing, the workers and the join.
    """
    if n_workers < 1:
        raise ValueError(f"n_workers must be >= 1, got {n_workers}")
    if store.shard_count != n_workers:
        raise ValueError(
            f"store has {store.shard_count} shards but {n_workers} workers requested"
        )
    t0 = time.perf_counter()
    queues = route_deltas(deltas, n_workers)
    results: list[tuple[int, int, int] | None] = [None] * n_workers
    errors: list[BaseException] = []

    def work(j: int) -> None:
        q = queues[j]
        try:
            results[j] = store.shards[j].apply_batch(q.keys, q.prices, q.quantities, insert_missing)
        except BaseException as exc:  # re-raised after the join
            errors.append(exc)

    threads = [
        threading.Thread(target=work, args=(j,), name=f"shard-{j}") for j in range(n_workers)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]

    report = ApplyReport()
    for applied, missing, inserted in results:
        report.merge(applied, missing, inserted)
    report.wall_clock = time.perf_counter() - t0
    return report


def _bsearch(fd: int, count: int, key: bytes) -> int:
    lo, hi = 0, count - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        probe = os.pread(fd, codec.KEY_LEN, codec.FIXED_HEADER_SIZE + codec.FIXED_RECORD_SIZE * mid)
        if len(probe) != codec.KEY_LEN:
            raise codec.FormatError("truncated fixed store")
        if probe == key:
            return mid
        if probe < key:
            lo = mid + 1
        else:
            hi = mid - 1
    return -1


def apply_disk_baseline(
    path: str | os.PathLike, deltas: DeltaBatch, flush_every: int = 1, insert_missing: bool = False
) -> ApplyReport:
    """Apply ``deltas`` directly to the fixed store at ``path``.

    ``insert_missing`` is accepted for signature parity and ignored: a
    sorted fixed-width file has no room for new keys.
    """
    if flush_every < 1:
        raise ValueError(f"flush_every must be >= 1, got {flush_every}")
    t0 = time.perf_counter()
    report = ApplyReport()
    fd = os.open(path, os.O_RDWR)
    try:
        size = os.fstat(fd).st_size
        count = codec.fixed_count(os.pread(fd, codec.FIXED_HEADER_SIZE, 0), size)
        pending = 0
        cols = (deltas.keys.tolist(), deltas.prices.tolist(), deltas.quantities.tolist())
        for key, price, qty in zip(*cols):
            idx = _bsearch(fd, count, b"%013d" % key)
            if idx < 0:
                report.merge(0, 1, 0)
                continue
            offset = codec.FIXED_HEADER_SIZE + codec.FIXED_RECORD_SIZE * idx + codec.PRICE_OFFSET
            os.pwrite(fd, codec.AMOUNTS.pack(price, qty), offset)
            report.merge(1, 0, 0)
            pending += 1
            if pending >= flush_every:
                os.fsync(fd)
                pending = 0
        if pending:
            os.fsync(fd)
    finally:
        os.close(fd)
    report.wall_clock = time.perf_counter() - t0
    return report


@dataclass
class PipelineReport:
    engine: EngineKind
    threads: int
    apply: ApplyReport
    records: int = 0
    dataset_malformed: int = 0
    duplicate_keys: int = 0
    stock_malformed: int = 0
    malformed_samples: list[tuple[int, str]] = field(default_factory=list)
    load_seconds: float = 0.0
    writeback_seconds: float = 0.0

    @property
    def apply_seconds(self) -> float:
        return self.apply.wall_clock

    @property
    def total_seconds(self) -> float:
        return self.load_seconds + self.apply_seconds + self.writeback_seconds


def read_dataset(path: str | os.PathLike) -> tuple[RecordBatch, int]:
    """Load a dataset that is either CSV or a fixed store (sniffed by magic)."""
    data = Path(path).read_bytes()
    if data.startswith(codec.FIXED_MAGIC):
        return codec.read_fixed_store(data), 0
    return codec.load_dataset_csv(data)


def dataset_to_csv(path: str | os.PathLike) -> bytes:
    """Canonical CSV bytes for either dataset format, for comparisons."""
    records, _ = read_dataset(path)
    return codec.write_dataset_csv(build_store(records, 1))


def _check_ratio(what: str, bad: int, good: int, limit: float | None) -> None:
    seen = bad + good
    if limit is not None and seen and bad / seen > limit:
        raise MalformedInputError(f"{what}: {bad} of {seen} entries malformed")


def run_apply(
    engine: EngineKind | str,
    dataset_path: str | os.PathLike,
    stock_path: str | os.PathLike,
    out_path: str | os.PathLike,
    n: int = 1,
    insert_missing: bool = False,
    flush_every: int = 1,
    max_malformed_ratio: float | None = None,
) -> PipelineReport:
    """Load, apply and write back; the three phases are timed separately.

    Memory engines write canonical CSV to ``out_path``. The disk baseline
    copies the dataset into a fixed store at ``out_path`` (timed as load)
    and updates it in place.
    """
    engine = EngineKind(engine)
    if n < 1:
        raise ValueError(f"thread/shard count must be >= 1, got {n}")

    t0 = time.perf_counter()
    records, bad_rows = read_dataset(dataset_path)
    stock = codec.parse_stock_stream(Path(stock_path).read_bytes())
    _check_ratio("dataset", bad_rows, len(records), max_malformed_ratio)
    _check_ratio("stock", stock.malformed, len(stock.entries), max_malformed_ratio)

    if engine is EngineKind.DISK_BASELINE:
        store = build_store(records, 1)  # collapses duplicate keys, sorts
        Path(out_path).write_bytes(codec.write_fixed_store(store.snapshot()))
    else:
        store = build_store(records, n)
    load_s = time.perf_counter() - t0

    if engine is EngineKind.MEMORY_SERIAL:
        report = apply_serial(store, stock.entries, insert_missing)
    elif engine is EngineKind.MEMORY_PARALLEL:
        report = apply_parallel(store, stock.entries, n, insert_missing)
    else:
        report = apply_disk_baseline(out_path, stock.entries, flush_every)

    t1 = time.perf_counter()
    if engine is not EngineKind.DISK_BASELINE:
        Path(out_path).write_bytes(codec.write_dataset_csv(store))
    writeback_s = time.perf_counter() - t1

    log.debug("%s n=%d: %s", engine.value, n, report)
    return PipelineReport(
        engine=engine,
        threads=n if engine is EngineKind.MEMORY_PARALLEL else 1,
        apply=report,
        records=len(store),
        dataset_malformed=bad_rows,
        duplicate_keys=store.duplicate_keys,
        stock_malformed=stock.malformed,
        malformed_samples=stock.malformed_samples,
        load_seconds=load_s,
        writeback_seconds=writeback_s,
    )
