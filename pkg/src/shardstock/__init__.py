"""Sharded in-memory batch updates for inventory stock files."""
from shardstock.core import (
    ApplyReport,
    DeltaBatch,
    DeltaEntry,
    Outcome,
    Record,
    RecordBatch,
    Shard,
    ShardedStore,
    apply_delta_to_shard,
    build_store,
    lookup,
    partition_key,
)
from shardstock.engine import (
    EngineKind,
    apply_disk_baseline,
    apply_parallel,
    apply_serial,
    route_deltas,
    run_apply,
)

__all__ = [
    "ApplyReport",
    "DeltaBatch",
    "DeltaEntry",
    "EngineKind",
    "Outcome",
    "Record",
    "RecordBatch",
    "Shard",
    "ShardedStore",
    "apply_delta_to_shard",
    "apply_disk_baseline",
    "apply_parallel",
    "apply_serial",
    "build_store",
    "lookup",
    "partition_key",
    "route_deltas",
    "run_apply",
]
