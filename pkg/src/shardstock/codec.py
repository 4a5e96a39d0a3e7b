"""Readers and writers for the three on-disk formats.

Stock file
    ``KEY$PRICE$QTY$`` per entry, e.g. ``9783652774577$3.93$495$``. Entries
    may be separated by LF, CRLF or nothing. Output is one entry per LF line.

Dataset CSV
    Header ``bo_ISBN13,bo_price,bo_quantity`` then ``key,price,qty`` rows,
    always written sorted by key with two-decimal prices.

Fixed store
    16-byte header (``MBMPFIX1`` + little-endian u64 count) followed by
    32-byte records sorted by key::

        0..12   key digits      14..21  price cents, u64 LE
        13      0x00            22..25  quantity, u32 LE
                                26..31  zero pad
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable

import numpy as np

from shardstock import _kernels as K
from shardstock.core import (
    KEY_LEN,
    DeltaBatch,
    DeltaEntry,
    Record,
    RecordBatch,
    ShardedStore,
)

CSV_HEADER = b"bo_ISBN13,bo_price,bo_quantity"

FIXED_MAGIC = b"MBMPFIX1"
FIXED_HEADER = struct.Struct("<8sQ")
FIXED_RECORD_SIZE = 32
FIXED_HEADER_SIZE = FIXED_HEADER.size
PRICE_OFFSET = 14
AMOUNTS = struct.Struct("<QI")  # bytes 14..25 of a record

FIXED_DTYPE = np.dtype(
    {
        "names": ["key", "price", "quantity"],
        "formats": ["S13", "<u8", "<u4"],
        "offsets": [0, 14, 22],
        "itemsize": FIXED_RECORD_SIZE,
    }
)

MAX_SAMPLES = 10

_ENTRY = rb"(\d{13})\$(\d{1,7})\.(\d{1,2})\$(\d{1,9})\$"
# A malformed region runs to the next LF; on a final unterminated line it runs
# to the next digit run that could start an entry, or to the end.
_BAD = rb"[^\n]+(?=\n)|.+?(?=(?<!\d)\d{13}\$|\Z)"
_STOCK_ENTRY = re.compile(_ENTRY)
_STOCK_TOKEN = re.compile(rb"(?P<e>" + _ENTRY + rb")|(?P<ws>\s+)|(?P<bad>" + _BAD + rb")")
_CSV_ROW = re.compile(rb"^(\d{13}),(\d{1,7})\.(\d{1,2}),(\d{1,9})\r?$", re.MULTILINE)
_WHITESPACE = [bytes([c]) for c in b" \t\n\r\x0b\x0c"]


class FormatError(ValueError):
    """Input is not a file of the expected kind (bad header, magic, size)."""


@dataclass
class StockParseReport:
    entries: DeltaBatch
    malformed: int = 0
    malformed_samples: list[tuple[int, str]] = field(default_factory=list)
    entry_bytes: int = 0
    malformed_bytes: int = 0
    blank_bytes: int = 0

    @property
    def malformed_ratio(self) -> float:
        seen = len(self.entries) + self.malformed
        return self.malformed / seen if seen else 0.0


def _columns(rows: list[tuple[bytes, bytes, bytes, bytes]]):
    """(key, whole, frac, qty) digit strings -> int64 keys, cents, quantities."""
    n = len(rows)
    if not n:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64)
    key, whole, frac, qty = zip(*rows)
    frac_val = np.fromiter(map(int, frac), dtype=np.int64, count=n)
    frac_len = np.fromiter(map(len, frac), dtype=np.int64, count=n)
    cents = np.fromiter(map(int, whole), dtype=np.int64, count=n) * 100
    cents += np.where(frac_len == 1, frac_val * 10, frac_val)
    return (
        np.fromiter(map(int, key), dtype=np.int64, count=n),
        cents,
        np.fromiter(map(int, qty), dtype=np.int64, count=n),
    )


def _describe(chunk: bytes) -> str:
    head = chunk[:KEY_LEN]
    if len(head) < KEY_LEN or not head.isdigit():
        return "bad key"
    if chunk[KEY_LEN:KEY_LEN + 1] != b"$":
        return "key not followed by '$'"
    return "bad price or quantity field"


def parse_stock_stream(data: bytes) -> StockParseReport:
    """Parse a stock file. Never raises on content; bad regions are counted."""
    data = bytes(data)
    ok, keys, prices, qtys = K.parse_stock_strict(np.frombuffer(data, dtype=np.uint8))
    if ok:
        blank = sum(data.count(c) for c in _WHITESPACE)
        return StockParseReport(
            DeltaBatch(keys, prices, qtys), entry_bytes=len(data) - blank, blank_bytes=blank
        )
    return _scan_stock(data)


def _scan_stock(data: bytes) -> StockParseReport:
    rows = []
    report = StockParseReport(DeltaBatch.empty())
    for m in _STOCK_TOKEN.finditer(data):
        kind = m.lastgroup
        span = m.end() - m.start()
        if kind == "e":
            rows.append(m.group(2, 3, 4, 5))
            report.entry_bytes += span
        elif kind == "ws":
            report.blank_bytes += span
        else:
            report.malformed += 1
            report.malformed_bytes += span
            if len(report.malformed_samples) < MAX_SAMPLES:
                report.malformed_samples.append((m.start(), _describe(m.group())))
    report.entries = DeltaBatch(*_columns(rows))
    return report


def serialize_stock(entries: Iterable[DeltaEntry]) -> bytes:
    batch = DeltaBatch.from_entries(entries)
    return K.format_rows(batch.keys, batch.prices, batch.quantities, ord("$"), True).tobytes()


def load_dataset_csv(data: bytes) -> tuple[RecordBatch, int]:
    """Parse dataset CSV into (records, malformed_line_count).

    Raises :class:`FormatError` when the header line is not the exact
    dataset header.
    """
    first, sep, body = data.partition(b"\n")
    if first.rstrip(b"\r") != CSV_HEADER:
        raise FormatError(f"missing dataset header {CSV_HEADER.decode()!r}")
    ok, keys, prices, qtys = K.parse_csv_strict(np.frombuffer(data, dtype=np.uint8), len(first) + len(sep))
    if ok:
        return RecordBatch(keys, prices, qtys), 0
    return _scan_csv(body)


def _scan_csv(body: bytes) -> tuple[RecordBatch, int]:
    rows = _CSV_ROW.findall(body)
    non_empty = sum(1 for line in body.split(b"\n") if line.strip())
    return RecordBatch(*_columns(rows)), non_empty - len(rows)


def records_to_csv(records: RecordBatch) -> bytes:
    """Canonical CSV for a batch whose keys are already unique and sorted."""
    body = K.format_rows(records.keys, records.prices, records.quantities, ord(","), False)
    return CSV_HEADER + b"\n" + body.tobytes()


def write_dataset_csv(store: ShardedStore) -> bytes:
    return records_to_csv(store.snapshot())


def write_fixed_store(records: Iterable[Record]) -> bytes:
    batch = RecordBatch.from_records(records).sorted()
    if len(batch) > 1 and not (np.diff(batch.keys) > 0).all():
        raise ValueError("fixed store keys must be unique")
    arr = np.zeros(len(batch), dtype=FIXED_DTYPE)
    arr["key"] = K.keys_to_ascii(batch.keys).view("S13").ravel()
    arr["price"] = batch.prices
    arr["quantity"] = batch.quantities
    return FIXED_HEADER.pack(FIXED_MAGIC, len(batch)) + arr.tobytes()


def fixed_count(header: bytes, file_size: int | None = None) -> int:
    """Validate a fixed-store header and return the record count."""
    if len(header) < FIXED_HEADER_SIZE:
        raise FormatError("truncated fixed store header")
    magic, count = FIXED_HEADER.unpack_from(header)
    if magic != FIXED_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if file_size is not None and file_size != FIXED_HEADER_SIZE + FIXED_RECORD_SIZE * count:
        raise FormatError(
            f"fixed store size {file_size} does not match count {count}"
        )
    return count


def read_fixed_store(data: bytes) -> RecordBatch:
    """Decode a whole fixed store (as bytes) into a sorted batch."""
    count = fixed_count(data, len(data))
    arr = np.frombuffer(data, dtype=FIXED_DTYPE, count=count, offset=FIXED_HEADER_SIZE)
    digits = np.frombuffer(arr["key"].tobytes(), dtype=np.uint8).reshape(count, KEY_LEN)
    if count and ((digits < ord("0")) | (digits > ord("9"))).any():
        raise FormatError("non-digit byte in fixed store key")
    powers = 10 ** np.arange(KEY_LEN - 1, -1, -1, dtype=np.int64)
    keys = ((digits - ord("0")).astype(np.int64) * powers).sum(axis=1)
    return RecordBatch(keys, arr["price"], arr["quantity"])


def _file_count(f: BinaryIO) -> int:
    f.seek(0, 2)
    size = f.tell()
    f.seek(0)
    return fixed_count(f.read(FIXED_HEADER_SIZE), size)


def _record_offset(f: BinaryIO, index: int) -> int:
    count = _file_count(f)
    if not 0 <= index < count:
        raise IndexError(f"record index {index} out of range 0..{count - 1}")
    return FIXED_HEADER_SIZE + FIXED_RECORD_SIZE * index


def read_fixed_record(f: BinaryIO, index: int) -> Record:
    f.seek(_record_offset(f, index))
    raw = f.read(FIXED_RECORD_SIZE)
    if len(raw) != FIXED_RECORD_SIZE:
        raise FormatError("truncated fixed record")
    price, qty = AMOUNTS.unpack_from(raw, PRICE_OFFSET)
    return Record(raw[:KEY_LEN], price, qty)


def overwrite_fixed_record(f: BinaryIO, index: int, price: int, quantity: int) -> None:
    """Rewrite bytes 14..25 of record ``index`` in place."""
    Record(b"0" * KEY_LEN, price, quantity)  # range check
    f.seek(_record_offset(f, index) + PRICE_OFFSET)
    f.write(AMOUNTS.pack(price, quantity))
