"""Compiled inner loops for the shard hash tables and the delta router.

The table and routing kernels are ``nogil`` so that one Python thread per
shard can run them truly concurrently. A shard table is an ``(capacity, 3)``
int64 array of ``key, price, quantity`` rows; a key is its 13 digits read as
an integer and ``-1`` marks an empty row.

Mixed signed/unsigned arithmetic silently promotes to float64 in numba, so
every constant touching a key or hash is spelled as ``np.uint64``.
"""
from __future__ import annotations

import numpy as np
from numba import njit

EMPTY = -1
FNV_OFFSET = np.uint64(14695981039346656037)
FNV_PRIME = np.uint64(1099511628211)
_FIB = np.uint64(0x9E3779B97F4A7C15)
_TEN = np.uint64(10)
_ZERO_CHAR = np.uint64(48)

# outcome codes shared with core.Outcome
APPLIED = 0
MISSING = 1
INSERTED = 2


@njit(nogil=True, cache=True)
def fnv1a_key(key):
    """FNV-1a-64 over the 13 zero-padded ASCII digits of ``key``."""
    k = np.uint64(key)
    p = np.uint64(10**12)
    h = FNV_OFFSET
    for _ in range(13):
        h = (h ^ (k // p % _TEN + _ZERO_CHAR)) * FNV_PRIME
        p = p // _TEN
    return h


@njit(nogil=True, cache=True)
def shard_ids(keys, n):
    out = np.empty(keys.shape[0], dtype=np.int64)
    nn = np.uint64(n)
    for i in range(keys.shape[0]):
        out[i] = np.int64(fnv1a_key(keys[i]) % nn)
    return out


@njit(nogil=True, cache=True)
def bucket_order(ids, n):
    """Stable counting sort of positions by shard id.

    Returns (order, offsets): positions of shard j are
    ``order[offsets[j]:offsets[j + 1]]`` in their original relative order.
    """
    offsets = np.zeros(n + 1, dtype=np.int64)
    for i in range(ids.shape[0]):
        offsets[ids[i] + 1] += 1
    for j in range(n):
        offsets[j + 1] += offsets[j]
    cursor = offsets[:n].copy()
    order = np.empty(ids.shape[0], dtype=np.int64)
    for i in range(ids.shape[0]):
        j = ids[i]
        order[cursor[j]] = i
        cursor[j] += 1
    return order, offsets


@njit(nogil=True, cache=True)
def _home(key, shift):
    return np.int64((np.uint64(key) * _FIB) >> np.uint64(shift))


@njit(nogil=True, cache=True)
def find_slot(table, shift, key):
    """Row holding ``key``, or ``-(free row) - 1`` where it would go."""
    mask = table.shape[0] - 1
    s = _home(key, shift)
    while True:
        cur = table[s, 0]
        if cur == key:
            return s
        if cur == EMPTY:
            return -s - 1
        s = (s + 1) & mask


@njit(nogil=True, cache=True)
def upsert_one(table, shift, key, price, qty, insert):
    s = find_slot(table, shift, key)
    if s >= 0:
        table[s, 1] = price
        table[s, 2] = qty
        return APPLIED
    if not insert:
        return MISSING
    s = -s - 1
    table[s, 0] = key
    table[s, 1] = price
    table[s, 2] = qty
    return INSERTED


@njit(nogil=True, cache=True)
def upsert_batch(table, shift, keys, prices, qtys, insert):
    """Apply ``keys[i] -> (prices[i], qtys[i])`` in index order.

    The caller guarantees enough free rows for every insert.
    Returns (applied, missing, inserted).
    """
    applied = 0
    missing = 0
    inserted = 0
    for i in range(keys.shape[0]):
        r = upsert_one(table, shift, np.int64(keys[i]), prices[i], qtys[i], insert)
        if r == APPLIED:
            applied += 1
        elif r == MISSING:
            missing += 1
        else:
            inserted += 1
    return applied, missing, inserted


@njit(nogil=True, cache=True)
def rehash(old, new, shift):
    for i in range(old.shape[0]):
        if old[i, 0] != EMPTY:
            upsert_one(new, shift, old[i, 0], old[i, 1], old[i, 2], True)


@njit(nogil=True, cache=True)
def keys_to_ascii(keys):
    out = np.empty((keys.shape[0], 13), dtype=np.uint8)
    for i in range(keys.shape[0]):
        k = np.uint64(keys[i])
        for d in range(12, -1, -1):
            out[i, d] = np.uint8(k % _TEN + _ZERO_CHAR)
            k = k // _TEN
    return out


@njit(cache=True)
def _put_uint(buf, pos, value, width):
    # writes value zero-padded to at least `width` digits; returns new pos
    digits = 1
    v = value
    while v >= 10:
        v //= 10
        digits += 1
    if digits < width:
        digits = width
    for i in range(digits - 1, -1, -1):
        buf[pos + i] = np.uint8(48 + value % 10)
        value //= 10
    return pos + digits


@njit(cache=True)
def format_rows(keys, prices, qtys, sep, stock):
    """Render rows as ``key<sep>W.FF<sep>qty`` lines (stock lines end in ``$``)."""
    n = keys.shape[0]
    buf = np.empty(n * 48, dtype=np.uint8)  # 13 + 2 + 11 + 1 + 9 + 2 < 48
    pos = 0
    for i in range(n):
        pos = _put_uint(buf, pos, np.int64(keys[i]), 13)
        buf[pos] = sep
        pos = _put_uint(buf, pos + 1, prices[i] // 100, 1)
        buf[pos] = 46
        pos = _put_uint(buf, pos + 1, prices[i] % 100, 2)
        buf[pos] = sep
        pos = _put_uint(buf, pos + 1, qtys[i], 1)
        if stock:
            buf[pos] = sep
            pos += 1
        buf[pos] = 10
        pos += 1
    return buf[:pos]


@njit(cache=True)
def _is_space(c):
    return c == 32 or (9 <= c <= 13)


@njit(cache=True)
def _digits(buf, pos, end, lo, hi):
    # returns (value, new_pos), new_pos = -1 unless lo..hi digits start at pos
    value = np.int64(0)
    start = pos
    while pos < end and 48 <= buf[pos] <= 57 and pos - start < hi:
        value = value * 10 + (buf[pos] - 48)
        pos += 1
    if pos - start < lo or (pos < end and 48 <= buf[pos] <= 57):
        return value, -1
    return value, pos


@njit(cache=True)
def _row(buf, pos, end, sep):
    """Parse ``key sep W.F[F] sep qty`` at pos; returns (key, cents, qty, pos|-1)."""
    key, pos = _digits(buf, pos, end, 13, 13)
    if pos < 0 or pos >= end or buf[pos] != sep:
        return 0, 0, 0, -1
    whole, pos = _digits(buf, pos + 1, end, 1, 7)
    if pos < 0 or pos >= end or buf[pos] != 46:
        return 0, 0, 0, -1
    start = pos + 1
    frac, pos = _digits(buf, start, end, 1, 2)
    if pos < 0 or pos >= end or buf[pos] != sep:
        return 0, 0, 0, -1
    if pos - start == 1:
        frac *= 10
    qty, pos = _digits(buf, pos + 1, end, 1, 9)
    if pos < 0:
        return 0, 0, 0, -1
    return key, whole * 100 + frac, qty, pos


@njit(cache=True)
def parse_stock_strict(buf):
    """Fast path for stock files with no malformed bytes.

    Returns (ok, keys, prices, qtys); ok is False at the first byte that is
    neither whitespace nor part of a well-formed entry.
    """
    n = buf.shape[0]
    cap = n // 20 + 1  # shortest entry is 20 bytes
    keys = np.empty(cap, dtype=np.int64)
    prices = np.empty(cap, dtype=np.int64)
    qtys = np.empty(cap, dtype=np.int64)
    count = 0
    pos = 0
    while pos < n:
        if _is_space(buf[pos]):
            pos += 1
            continue
        key, cents, qty, pos = _row(buf, pos, n, 36)
        if pos < 0 or pos >= n or buf[pos] != 36:
            return False, keys[:0], prices[:0], qtys[:0]
        pos += 1
        keys[count] = key
        prices[count] = cents
        qtys[count] = qty
        count += 1
    return True, keys[:count], prices[:count], qtys[:count]


@njit(cache=True)
def parse_csv_strict(buf, pos):
    """Fast path for CSV rows from ``pos`` on; same contract as parse_stock_strict.

    Blank (whitespace-only) lines are skipped; a row may end in CR.
    """
    n = buf.shape[0]
    cap = (n - pos) // 19 + 1
    keys = np.empty(cap, dtype=np.int64)
    prices = np.empty(cap, dtype=np.int64)
    qtys = np.empty(cap, dtype=np.int64)
    count = 0
    while pos < n:
        end = pos
        while end < n and buf[end] != 10:
            end += 1
        blank = True
        for i in range(pos, end):
            if not _is_space(buf[i]):
                blank = False
                break
        if not blank:
            key, cents, qty, p = _row(buf, pos, end, 44)
            if p >= 0 and p < end and buf[p] == 13:
                p += 1
            if p != end:
                return False, keys[:0], prices[:0], qtys[:0]
            keys[count] = key
            prices[count] = cents
            qtys[count] = qty
            count += 1
        pos = end + 1
    return True, keys[:count], prices[:count], qtys[:count]
