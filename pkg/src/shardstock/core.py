"""Domain types, key partitioning and the sharded in-memory store.

An inventory row is ``(key, price, quantity)``: the key is a 13-digit ISBN
held as ASCII bytes, the price is an integer number of cents and the
quantity a plain count. Nothing here ever touches a float.

The store is ``n`` disjoint hash tables. A key lives in shard
``partition_key(key, n)`` (FNV-1a-64 of its 13 ASCII bytes, modulo ``n``) and
nowhere else, so ``n`` writers may mutate ``n`` distinct shards at once
without coordination. Concurrent mutation of one shard is not supported.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, Union, overload

import numpy as np

from shardstock import _kernels as K

KEY_LEN = 13
MAX_PRICE = 999_999_999
MAX_QUANTITY = 999_999_999

FNV64_OFFSET = 14695981039346656037
FNV64_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1

KeyLike = Union[bytes, str, int]

_PRICE_RE = re.compile(rb"(\d{1,7})\.(\d{1,2})")


def key_bytes(key: KeyLike) -> bytes:
    """Normalize ``key`` to its 13 ASCII digit bytes, validating it."""
    if isinstance(key, int) and not isinstance(key, bool):
        if not 0 <= key < 10**KEY_LEN:
            raise ValueError(f"key out of range: {key}")
        return b"%013d" % key
    if isinstance(key, str):
        key = key.encode("ascii", "replace")
    if isinstance(key, (bytes, bytearray, memoryview)):
        key = bytes(key)
        if len(key) == KEY_LEN and key.isdigit():
            return key
    raise ValueError(f"not a 13-digit key: {key!r}")


def key_int(key: KeyLike) -> int:
    if isinstance(key, int) and not isinstance(key, bool):
        if not 0 <= key < 10**KEY_LEN:
            raise ValueError(f"key out of range: {key}")
        return key
    return int(key_bytes(key))


def format_price(cents: int) -> str:
    """116 -> ``"1.16"``; always exactly two decimals."""
    return f"{cents // 100}.{cents % 100:02d}"


def parse_price(text: bytes | str) -> int:
    """Parse ``1-7 digits '.' 1-2 digits`` into cents; ``"3.9"`` -> 390."""
    if isinstance(text, str):
        text = text.encode("ascii", "replace")
    m = _PRICE_RE.fullmatch(text)
    if m is None:
        raise ValueError(f"malformed price: {text!r}")
    whole, frac = m.groups()
    return int(whole) * 100 + int(frac.ljust(2, b"0"))


def _check_amounts(price: int, quantity: int) -> None:
    if not 0 <= price <= MAX_PRICE:
        raise ValueError(f"price out of range: {price}")
    if not 0 <= quantity <= MAX_QUANTITY:
        raise ValueError(f"quantity out of range: {quantity}")


@dataclass(frozen=True, slots=True)
class Record:
    key: bytes
    price: int
    quantity: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "key", key_bytes(self.key))
        _check_amounts(self.price, self.quantity)


@dataclass(frozen=True, slots=True)
class DeltaEntry:
    """One stock-file line: overwrite ``key`` with a new price and quantity."""

    key: bytes
    new_price: int
    new_quantity: int
    source_ordinal: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "key", key_bytes(self.key))
        _check_amounts(self.new_price, self.new_quantity)
        if self.source_ordinal < 0:
            raise ValueError("source_ordinal must be non-negative")


def _i64(values) -> np.ndarray:
    return np.ascontiguousarray(values, dtype=np.int64)


class RecordBatch(Sequence[Record]):
    """Columnar run of records as int64 columns: key digits, cents, counts.

    Behaves as a read-only sequence of :class:`Record`. Bulk paths work on
    the arrays directly and never materialize per-row objects.
    """

    __slots__ = ("keys", "prices", "quantities")

    def __init__(self, keys, prices, quantities) -> None:
        self.keys = _i64(keys)
        self.prices = _i64(prices)
        self.quantities = _i64(quantities)
        if not (len(self.keys) == len(self.prices) == len(self.quantities)):
            raise ValueError("column lengths differ")

    @classmethod
    def empty(cls) -> RecordBatch:
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64))

    @classmethod
    def from_records(cls, records: Iterable[Record]) -> RecordBatch:
        if isinstance(records, RecordBatch):
            return records
        rows = list(records)
        return cls(
            [int(r.key) for r in rows],
            [r.price for r in rows],
            [r.quantity for r in rows],
        )

    def __len__(self) -> int:
        return len(self.keys)

    @overload
    def __getitem__(self, i: int) -> Record: ...
    @overload
    def __getitem__(self, i: slice) -> RecordBatch: ...

    def __getitem__(self, i):
        if isinstance(i, slice):
            return RecordBatch(self.keys[i], self.prices[i], self.quantities[i])
        return Record(int(self.keys[i]), int(self.prices[i]), int(self.quantities[i]))

    def __iter__(self) -> Iterator[Record]:
        for k, p, q in zip(self.keys.tolist(), self.prices.tolist(), self.quantities.tolist()):
            yield Record(k, p, q)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RecordBatch):
            return NotImplemented
        return (
            np.array_equal(self.keys, other.keys)
            and np.array_equal(self.prices, other.prices)
            and np.array_equal(self.quantities, other.quantities)
        )

    def sorted(self) -> RecordBatch:
        order = np.argsort(self.keys, kind="stable")
        return RecordBatch(self.keys[order], self.prices[order], self.quantities[order])

    def __repr__(self) -> str:
        return f"RecordBatch(len={len(self)})"


class DeltaBatch(Sequence[DeltaEntry]):
    """Columnar run of stock entries, carrying each entry's stream ordinal."""

    __slots__ = ("keys", "prices", "quantities", "ordinals")

    def __init__(self, keys, prices, quantities, ordinals=None) -> None:
        self.keys = _i64(keys)
        self.prices = _i64(prices)
        self.quantities = _i64(quantities)
        if ordinals is None:
            ordinals = np.arange(len(self.keys), dtype=np.int64)
        self.ordinals = _i64(ordinals)
        if not (len(self.keys) == len(self.prices) == len(self.quantities) == len(self.ordinals)):
            raise ValueError("column lengths differ")

    @classmethod
    def empty(cls) -> DeltaBatch:
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64))

    @classmethod
    def from_entries(cls, entries: Iterable[DeltaEntry]) -> DeltaBatch:
        if isinstance(entries, DeltaBatch):
            return entries
        rows = list(entries)
        ordinals = [d.source_ordinal for d in rows]
        if any(b <= a for a, b in zip(ordinals, ordinals[1:])):
            raise ValueError("source_ordinal must be strictly increasing")
        return cls(
            [int(d.key) for d in rows],
            [d.new_price for d in rows],
            [d.new_quantity for d in rows],
            ordinals,
        )

    def __len__(self) -> int:
        return len(self.keys)

    @overload
    def __getitem__(self, i: int) -> DeltaEntry: ...
    @overload
    def __getitem__(self, i: slice) -> DeltaBatch: ...

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.take(np.arange(len(self))[i])
        return DeltaEntry(
            int(self.keys[i]), int(self.prices[i]), int(self.quantities[i]), int(self.ordinals[i])
        )

    def __iter__(self) -> Iterator[DeltaEntry]:
        cols = (self.keys.tolist(), self.prices.tolist(), self.quantities.tolist(), self.ordinals.tolist())
        for k, p, q, o in zip(*cols):
            yield DeltaEntry(k, p, q, o)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DeltaBatch):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in zip(
                (self.keys, self.prices, self.quantities, self.ordinals),
                (other.keys, other.prices, other.quantities, other.ordinals),
            )
        )

    def take(self, index: np.ndarray) -> DeltaBatch:
        return DeltaBatch(
            self.keys[index], self.prices[index], self.quantities[index], self.ordinals[index]
        )

    def __repr__(self) -> str:
        return f"DeltaBatch(len={len(self)})"


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def partition_key(key: KeyLike, n: int) -> int:
    """Shard index of ``key`` among ``n`` shards: FNV-1a-64 of the digits mod ``n``."""
    if n < 1:
        raise ValueError(f"shard count must be >= 1, got {n}")
    return fnv1a_64(key_bytes(key)) % n


def partition_keys(keys: np.ndarray, n: int) -> np.ndarray:
    """Vectorized :func:`partition_key` over an int64 key array."""
    if n < 1:
        raise ValueError(f"shard count must be >= 1, got {n}")
    return K.shard_ids(_i64(keys), n)


class Outcome(enum.IntEnum):
    APPLIED = K.APPLIED
    MISSING = K.MISSING
    INSERTED = K.INSERTED


@dataclass
class ApplyReport:
    applied: int = 0
    missing_key: int = 0
    inserted: int = 0
    total_deltas: int = 0
    wall_clock: float = 0.0  # seconds

    @property
    def millis(self) -> int:
        return round(self.wall_clock * 1000)

    def merge(self, applied: int, missing: int, inserted: int) -> None:
        self.applied += applied
        self.missing_key += missing
        self.inserted += inserted
        self.total_deltas += applied + missing + inserted

    def counts(self) -> tuple[int, int, int, int]:
        return (self.applied, self.missing_key, self.inserted, self.total_deltas)


_MIN_CAPACITY = 8


class Shard:
    """One open-addressing hash table (linear probing, load factor <= 1/2).

    Rows of ``key, price, quantity`` live in a single int64 array so the
    compiled kernels can update them without holding the GIL, touching one
    cache line per probe.
    """

    __slots__ = ("index", "_table", "_shift", "_size")

    def __init__(self, index: int = 0, capacity: int = _MIN_CAPACITY) -> None:
        self.index = index
        self._size = 0
        self._allocate(capacity)

    def _allocate(self, capacity: int) -> None:
        cap = max(_MIN_CAPACITY, 1 << (capacity - 1).bit_length())
        self._table = np.zeros((cap, 3), dtype=np.int64)
        self._table[:, 0] = K.EMPTY
        self._shift = 64 - (cap.bit_length() - 1)

    @property
    def capacity(self) -> int:
        return len(self._table)

    def __len__(self) -> int:
        return self._size

    def reserve(self, extra: int) -> None:
        """Make room for ``extra`` more keys without exceeding half load."""
        need = 2 * (self._size + extra)
        if need <= self.capacity:
            return
        old = self._table
        self._allocate(need)
        K.rehash(old, self._table, self._shift)

    def get(self, key: int) -> tuple[int, int] | None:
        s = K.find_slot(self._table, self._shift, key)
        if s < 0:
            return None
        _, price, qty = self._table[s].tolist()
        return price, qty

    def __contains__(self, key: int) -> bool:
        return K.find_slot(self._table, self._shift, key) >= 0

    def upsert(self, key: int, price: int, quantity: int, insert_missing: bool) -> Outcome:
        if insert_missing:
            self.reserve(1)
        r = K.upsert_one(self._table, self._shift, key, price, quantity, insert_missing)
        if r == K.INSERTED:
            self._size += 1
        return Outcome(r)

    def apply_batch(
        self, keys: np.ndarray, prices: np.ndarray, quantities: np.ndarray, insert_missing: bool
    ) -> tuple[int, int, int]:
        """Upsert rows in order; returns ``(applied, missing, inserted)``."""
        if insert_missing:
            self.reserve(len(keys))
        applied, missing, inserted = K.upsert_batch(
            self._table, self._shift, keys, prices, quantities, insert_missing
        )
        self._size += inserted
        return applied, missing, inserted

    def to_batch(self) -> RecordBatch:
        """Occupied entries in slot order (not sorted)."""
        rows = self._table[self._table[:, 0] != K.EMPTY]
        return RecordBatch(rows[:, 0], rows[:, 1], rows[:, 2])

    def keys(self) -> list[int]:
        col = self._table[:, 0]
        return col[col != K.EMPTY].tolist()


@dataclass
class ShardedStore:
    """``shard_count`` disjoint hash tables keyed by :func:`partition_key`."""

    shard_count: int
    shards: list[Shard] = field(default_factory=list)
    duplicate_keys: int = 0  # duplicates collapsed by build_store

    def __post_init__(self) -> None:
        if self.shard_count < 1:
            raise ValueError(f"shard count must be >= 1, got {self.shard_count}")
        if not self.shards:
            self.shards = [Shard(j) for j in range(self.shard_count)]
        if len(self.shards) != self.shard_count:
            raise ValueError("shards list does not match shard_count")

    def __len__(self) -> int:
        return sum(len(s) for s in self.shards)

    def shard_for(self, key: KeyLike) -> Shard:
        return self.shards[partition_key(key, self.shard_count)]

    def lookup(self, key: KeyLike) -> tuple[int, int] | None:
        return self.shard_for(key).get(key_int(key))

    def snapshot(self) -> RecordBatch:
        """All records, ascending by key. Independent of shard count."""
        parts = [s.to_batch() for s in self.shards]
        batch = RecordBatch(
            np.concatenate([p.keys for p in parts]),
            np.concatenate([p.prices for p in parts]),
            np.concatenate([p.quantities for p in parts]),
        )
        return batch.sorted()


def build_store(records: Iterable[Record], n: int) -> ShardedStore:
    """Load ``records`` into ``n`` shards; a repeated key keeps its last row.

    The number of collapsed duplicates is left on ``store.duplicate_keys``.
    """
    if n < 1:
        raise ValueError(f"shard count must be >= 1, got {n}")
    batch = RecordBatch.from_records(records)
    store = ShardedStore(n)
    ids = K.shard_ids(batch.keys, n)
    order, offsets = K.bucket_order(ids, n)
    for j, shard in enumerate(store.shards):
        idx = order[offsets[j]:offsets[j + 1]]
        applied, _, _ = shard.apply_batch(
            batch.keys[idx], batch.prices[idx], batch.quantities[idx], insert_missing=True
        )
        store.duplicate_keys += applied
    return store


def lookup(store: ShardedStore, key: KeyLike) -> tuple[int, int] | None:
    """Current ``(price_cents, quantity)`` for ``key``, or ``None``."""
    return store.lookup(key)


def apply_delta_to_shard(shard: Shard, delta: DeltaEntry, insert_missing: bool = False) -> Outcome:
    """Overwrite one key's price and quantity in ``shard``.

    ``delta.key`` must partition to this shard; the caller routes.
    """
    return shard.upsert(int(delta.key), delta.new_price, delta.new_quantity, insert_missing)
