"""Synthetic data generation and the size x engine x threads benchmark.

Generation consumes one SplitMix64 stream in this fixed order, so a
``GenSpec`` always produces the same bytes:

1. for each record: a key ``978`` + ``draw % 10**10`` (redrawn while already
   used), then its price, then its quantity;
2. a Fisher-Yates shuffle of the keys in generation order
   (``j = draw % (i + 1)`` for ``i`` from ``count - 1`` down to 1);
3. for each shuffled key: the new price, then the new quantity.

Prices and quantities are ``lo + draw % (hi - lo + 1)``.
"""
from __future__ import annotations

import logging
import math
import re
import statistics
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from shardstock import codec
from shardstock.core import DeltaBatch, RecordBatch
from shardstock.engine import EngineKind, run_apply

log = logging.getLogger(__name__)

_M64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
KEY_PREFIX = 978 * 10**10
KEY_SPACE = 10**10
DEFAULT_SIZES = (100_000, 500_000, 1_000_000, 1_500_000, 2_000_000)


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & _M64

    def next(self) -> int:
        self.state = (self.state + _GAMMA) & _M64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        return z ^ (z >> 31)

    def take(self, n: int) -> np.ndarray:
        """The next ``n`` outputs at once (same values as ``n`` calls to next)."""
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + np.uint64(_GAMMA) * np.arange(1, n + 1, dtype=np.uint64)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z ^= z >> np.uint64(31)
        self.state = (self.state + _GAMMA * n) & _M64
        return z

    def stream(self, block: int = 1 << 16) -> Iterator[int]:
        while True:
            yield from self.take(block).tolist()


@dataclass(frozen=True)
class GenSpec:
    record_count: int
    seed: int = 0
    price_range: tuple[int, int] = (1, 9999)
    quantity_range: tuple[int, int] = (0, 999)

    def __post_init__(self) -> None:
        if not 0 <= self.record_count <= KEY_SPACE:
            raise ValueError(f"record_count must be in 0..{KEY_SPACE}")
        for lo, hi in (self.price_range, self.quantity_range):
            if not 0 <= lo <= hi <= 999_999_999:
                raise ValueError(f"bad range {lo}..{hi}")


def generate(spec: GenSpec) -> tuple[bytes, bytes]:
    """Build ``(dataset_csv, stock_file)`` bytes for ``spec``."""
    draws = SplitMix64(spec.seed).stream()
    draw = draws.__next__
    count = spec.record_count
    plo, phi = spec.price_range
    qlo, qhi = spec.quantity_range
    pspan, qspan = phi - plo + 1, qhi - qlo + 1

    keys: list[int] = []
    prices: list[int] = []
    qtys: list[int] = []
    seen: set[int] = set()
    for _ in range(count):
        key = KEY_PREFIX + draw() % KEY_SPACE
        while key in seen:
            key = KEY_PREFIX + draw() % KEY_SPACE
        seen.add(key)
        keys.append(key)
        prices.append(plo + draw() % pspan)
        qtys.append(qlo + draw() % qspan)

    order = keys[:]
    for i in range(count - 1, 0, -1):
        j = draw() % (i + 1)
        order[i], order[j] = order[j], order[i]
    new_prices = []
    new_qtys = []
    for _ in range(count):
        new_prices.append(plo + draw() % pspan)
        new_qtys.append(qlo + draw() % qspan)

    dataset = codec.records_to_csv(RecordBatch(keys, prices, qtys).sorted())
    stock = codec.serialize_stock(DeltaBatch(order, new_prices, new_qtys))
    return dataset, stock


# -- benchmark -------------------------------------------------------------


@dataclass
class BenchCell:
    engine: EngineKind
    threads: int
    records: int
    millis: int | None = None
    status: str = "ok"  # ok | skipped | failed
    reason: str = ""


@dataclass
class BenchTable:
    sizes: list[int]
    cells: list[BenchCell] = field(default_factory=list)

    def rows(self) -> list[tuple[EngineKind, int]]:
        out: list[tuple[EngineKind, int]] = []
        for c in self.cells:
            if (c.engine, c.threads) not in out:
                out.append((c.engine, c.threads))
        return out

    def cell(self, engine: EngineKind, threads: int, records: int) -> BenchCell | None:
        for c in self.cells:
            if (c.engine, c.threads, c.records) == (engine, threads, records):
                return c
        return None


def _row_keys(engines: Sequence[EngineKind], thread_counts: Sequence[int]):
    # only the parallel engine's timings depend on the thread count
    for engine in engines:
        if engine is EngineKind.MEMORY_PARALLEL:
            for n in thread_counts:
                yield engine, n
        else:
            yield engine, 1


def run_benchmark(
    sizes: Sequence[int] = DEFAULT_SIZES,
    engines: Sequence[EngineKind | str] = (EngineKind.MEMORY_SERIAL, EngineKind.MEMORY_PARALLEL),
    thread_counts: Sequence[int] = (1,),
    baseline_cap: int = 100_000,
    seed: int = 0,
    repeats: int = 1,
    flush_every: int = 1,
    workdir: str | Path | None = None,
) -> BenchTable:
    """Time ``run_apply`` (load + apply + write-back) for every cell.

    Each size gets its own dataset generated with seed ``seed ^ size``. One
    warm-up run per row, on a small dataset, precedes the measurements.
    A cell's value is the median over ``repeats`` runs.
    """
    if not sizes:
        raise ValueError("sizes must be non-empty")
    engines = [EngineKind(e) for e in engines]
    rows = list(_row_keys(engines, thread_counts))
    table = BenchTable(sorted(sizes))

    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        base = Path(tmp)

        def files_for(size: int, tag: str) -> tuple[Path, Path]:
            csv_path, dat_path = base / f"{tag}.csv", base / f"{tag}.dat"
            dataset, stock = generate(GenSpec(size, seed ^ size))
            csv_path.write_bytes(dataset)
            dat_path.write_bytes(stock)
            return csv_path, dat_path

        warm = files_for(min(min(sizes), 1000), "warmup")
        for engine, n in rows:
            run_apply(engine, *warm, base / "warmup.out", n, flush_every=flush_every)

        for size in table.sizes:
            try:
                paths = files_for(size, f"n{size}")
            except MemoryError as exc:
                for engine, n in rows:
                    table.cells.append(BenchCell(engine, n, size, status="failed", reason=f"generate: {exc!r}"))
                continue
            for engine, n in rows:
                if engine is EngineKind.DISK_BASELINE and size > baseline_cap:
                    table.cells.append(
                        BenchCell(engine, n, size, status="skipped", reason=f"above baseline cap {baseline_cap}")
                    )
                    continue
                try:
                    runs = [
                        run_apply(engine, *paths, base / "out", n, flush_every=flush_every).total_seconds
                        for _ in range(repeats)
                    ]
                except MemoryError as exc:
                    table.cells.append(BenchCell(engine, n, size, status="failed", reason=repr(exc)))
                    continue
                millis = round(statistics.median(runs) * 1000)
                log.info("%s x%d @ %d: %d ms", engine.value, n, size, millis)
                table.cells.append(BenchCell(engine, n, size, millis))
            for p in paths:
                p.unlink()
    return table


# -- rendering ---------------------------------------------------------------

_HMS = re.compile(r"(\d+)h (\d+)m (\d{2})s")


def format_hms(millis: int) -> str:
    """63000 -> ``"0h 1m 03s"``; sub-second remainders are truncated."""
    secs = millis // 1000
    return f"{secs // 3600}h {secs // 60 % 60}m {secs % 60:02d}s"


def parse_hms(text: str) -> int:
    m = _HMS.fullmatch(text.strip())
    if m is None:
        raise ValueError(f"not an 'Hh Mm Ss' duration: {text!r}")
    h, mi, s = map(int, m.groups())
    return ((h * 60 + mi) * 60 + s) * 1000


SKIPPED = "—"


def _row_label(engine: EngineKind, threads: int) -> str:
    return f"{engine.value} x{threads}"


def render_table(table: BenchTable) -> str:
    header = ["# of Records to Update"] + [f"{s:,}" for s in table.sizes]
    lines = [header]
    for engine, n in table.rows():
        hms = [_row_label(engine, n)]
        ms = ["  millis"]
        for size in table.sizes:
            c = table.cell(engine, n, size)
            if c is None or c.millis is None:
                hms.append(SKIPPED)
                ms.append(SKIPPED)
            else:
                hms.append(format_hms(c.millis))
                ms.append(str(c.millis))
        lines += [hms, ms]
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    out = []
    for row in lines:
        cells = [row[0].ljust(widths[0])] + [v.rjust(w) for v, w in zip(row[1:], widths[1:])]
        out.append("  ".join(cells).rstrip())
    return "\n".join(out) + "\n"


def render_csv(table: BenchTable) -> bytes:
    lines = ["engine,threads,records,millis,status"]
    for engine, n in table.rows():
        for size in table.sizes:
            c = table.cell(engine, n, size)
            if c is None:
                continue
            millis = "" if c.millis is None else str(c.millis)
            lines.append(f"{c.engine.value},{c.threads},{c.records},{millis},{c.status}")
    return ("\n".join(lines) + "\n").encode()


_PALETTE = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1", "#edc948")


def render_histogram_svg(table: BenchTable) -> bytes:
    """Grouped bars, one group per size, on a log10 milliseconds axis."""
    rows = table.rows()
    width, height = 760, 420
    left, right, top, bottom = 70, 20, 30, 70
    plot_w, plot_h = width - left - right, height - top - bottom
    timed = [c.millis for c in table.cells if c.millis]
    decades = max(1, math.ceil(math.log10(max(timed)))) if timed else 1

    def y_of(ms: float) -> float:
        return top + plot_h - plot_h * min(math.log10(max(ms, 1)), decades) / decades

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<line class="axis" x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
        f'<text x="14" y="{top + plot_h / 2}" transform="rotate(-90 14 {top + plot_h / 2})" '
        f'text-anchor="middle">Execution time (ms, log scale)</text>',
    ]
    for d in range(decades + 1):
        y = y_of(10**d)
        parts.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">1e{d}</text>')

    group_w = plot_w / max(len(table.sizes), 1)
    bar_w = group_w * 0.8 / max(len(rows), 1)
    for g, size in enumerate(table.sizes):
        gx = left + g * group_w + group_w * 0.1
        parts.append(
            f'<text class="group" x="{gx + group_w * 0.4:.1f}" y="{top + plot_h + 16}" '
            f'text-anchor="middle">{size:,}</text>'
        )
        for r, (engine, n) in enumerate(rows):
            c = table.cell(engine, n, size)
            if c is None or c.millis is None:
                continue
            y = y_of(c.millis)
            parts.append(
                f'<rect class="bar" x="{gx + r * bar_w:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
                f'height="{top + plot_h - y:.1f}" fill="{_PALETTE[r % len(_PALETTE)]}" '
                f'data-engine="{engine.value}" data-threads="{n}" data-records="{size}" '
                f'data-millis="{c.millis}"/>'
            )
    for r, (engine, n) in enumerate(rows):
        lx = left + r * 150
        ly = height - 22
        parts.append(f'<rect x="{lx}" y="{ly - 9}" width="10" height="10" fill="{_PALETTE[r % len(_PALETTE)]}"/>')
        parts.append(f'<text x="{lx + 14}" y="{ly}">{_row_label(engine, n)}</text>')
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode()
