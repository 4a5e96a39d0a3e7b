"""Command-line entry point: ``shardstock {gen,apply,bench,verify}``.

Exit codes: 0 success, 1 semantic failure (verify mismatch, too much
malformed input), 2 environment or I/O problem.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Sequence

from shardstock import bench, codec
from shardstock.core import format_price
from shardstock.engine import EngineKind, MalformedInputError, dataset_to_csv, run_apply

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ENV = 2

THREADS_ENV = "SHARDSTOCK_THREADS"
MALFORMED_LIMIT = 0.5


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return int(raw)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    return os.cpu_count() or 1


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _count(text: str) -> int:
    value = int(text.replace(",", "").replace("_", ""))
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _int_list(text: str) -> list[int]:
    return [_count(part) for part in text.split(",") if part.strip()]


def _err(msg: str) -> None:
    print(f"shardstock: {msg}", file=sys.stderr)


def _timing_lines(report) -> list[str]:
    phases = [
        ("load", report.load_seconds),
        ("apply", report.apply_seconds),
        ("writeback", report.writeback_seconds),
        ("total", report.total_seconds),
    ]
    lines = [" ".join(f"{name}_ms={round(s * 1000)}" for name, s in phases)]
    lines.append(f"{'phase':<10} {'millis':>10}  elapsed")
    for name, s in phases:
        ms = round(s * 1000)
        lines.append(f"{name:<10} {ms:>10}  {bench.format_hms(ms)}")
    return lines


def cmd_gen(args: argparse.Namespace) -> int:
    dataset, stock = bench.generate(bench.GenSpec(args.count, args.seed))
    prefix = Path(args.out)
    csv_path = prefix.with_name(prefix.name + ".csv")
    dat_path = prefix.with_name(prefix.name + ".dat")
    try:
        csv_path.write_bytes(dataset)
        dat_path.write_bytes(stock)
    except OSError as exc:
        _err(f"cannot write output: {exc}")
        return EXIT_ENV
    print(f"records={args.count} seed={args.seed}")
    print(f"dataset={csv_path} bytes={len(dataset)}")
    print(f"stock={dat_path} bytes={len(stock)}")
    return EXIT_OK


def cmd_apply(args: argparse.Namespace) -> int:
    try:
        report = run_apply(
            args.engine,
            args.dataset,
            args.stock,
            args.out,
            n=args.threads,
            insert_missing=args.insert_missing,
            flush_every=args.flush_every,
            max_malformed_ratio=MALFORMED_LIMIT,
        )
    except MalformedInputError as exc:
        _err(str(exc))
        return EXIT_FAILED
    except (OSError, codec.FormatError) as exc:
        _err(str(exc))
        return EXIT_ENV
    a = report.apply
    print(f"engine={report.engine.value} threads={report.threads}")
    print(
        f"records={report.records} duplicates={report.duplicate_keys} "
        f"dataset_malformed={report.dataset_malformed} stock_malformed={report.stock_malformed}"
    )
    print(f"applied={a.applied} missing={a.missing_key} inserted={a.inserted} total_deltas={a.total_deltas}")
    for offset, reason in report.malformed_samples:
        print(f"malformed offset={offset} reason={reason!r}")
    print("\n".join(_timing_lines(report)))
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    engines = args.engine or [EngineKind.MEMORY_SERIAL, EngineKind.MEMORY_PARALLEL]
    try:
        table = bench.run_benchmark(
            sizes=args.sizes,
            engines=engines,
            thread_counts=args.threads,
            baseline_cap=args.baseline_cap,
            seed=args.seed,
            repeats=args.repeats,
            flush_every=args.flush_every,
        )
        prefix = Path(args.out)
        prefix.with_name(prefix.name + ".csv").write_bytes(bench.render_csv(table))
        prefix.with_name(prefix.name + ".svg").write_bytes(bench.render_histogram_svg(table))
    except OSError as exc:
        _err(str(exc))
        return EXIT_ENV
    for c in table.cells:
        millis = "" if c.millis is None else c.millis
        print(f"engine={c.engine.value} threads={c.threads} records={c.records} millis={millis} status={c.status}")
    print(bench.render_table(table), end="")
    return EXIT_OK


def _parse_rows(csv_bytes: bytes) -> dict[bytes, tuple[int, int]]:
    records, _ = codec.load_dataset_csv(csv_bytes)
    return {r.key: (r.price, r.quantity) for r in records}


def field_diff(name_a: str, a: bytes, name_b: str, b: bytes, limit: int = 20) -> list[str]:
    """Human-readable per-field differences between two canonical CSVs."""
    rows_a, rows_b = _parse_rows(a), _parse_rows(b)
    out = []
    for key in sorted(rows_a.keys() | rows_b.keys()):
        va, vb = rows_a.get(key), rows_b.get(key)
        k = key.decode()
        if va is None or vb is None:
            out.append(f"key={k} only_in={name_a if vb is None else name_b}")
            continue
        if va[0] != vb[0]:
            out.append(f"key={k} field=price {name_a}={format_price(va[0])} {name_b}={format_price(vb[0])}")
        if va[1] != vb[1]:
            out.append(f"key={k} field=quantity {name_a}={va[1]} {name_b}={vb[1]}")
        if len(out) >= limit:
            out.append("...")
            break
    return out


def cmd_verify(args: argparse.Namespace) -> int:
    dataset, stock = bench.generate(bench.GenSpec(args.count, args.seed))
    outputs: dict[str, bytes] = {}
    try:
        with tempfile.TemporaryDirectory() as tmp:
            base = Path(tmp)
            (base / "in.csv").write_bytes(dataset)
            (base / "in.dat").write_bytes(stock)
            for engine in EngineKind:
                out = base / f"{engine.value}.out"
                report = run_apply(
                    engine, base / "in.csv", base / "in.dat", out,
                    n=args.threads, flush_every=args.flush_every,
                )
                a = report.apply
                print(
                    f"engine={engine.value} applied={a.applied} missing={a.missing_key} "
                    f"inserted={a.inserted} total_ms={round(report.total_seconds * 1000)}"
                )
                outputs[engine.value] = dataset_to_csv(out)
    except OSError as exc:
        _err(str(exc))
        return EXIT_ENV

    reference = EngineKind.MEMORY_SERIAL.value
    ok = True
    for name, data in outputs.items():
        if data == outputs[reference]:
            continue
        ok = False
        print(f"mismatch engine={name} reference={reference}")
        for line in field_diff(reference, outputs[reference], name, data):
            print("  " + line)
    print(f"verify={'ok' if ok else 'mismatch'} records={args.count}")
    return EXIT_OK if ok else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shardstock",
        description="Sharded in-memory batch updater for inventory stock files.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a dataset CSV and a stock file")
    gen.add_argument("--count", type=_count, default=1000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default="inventory", help="output prefix; writes PREFIX.csv and PREFIX.dat")
    gen.set_defaults(func=cmd_gen)

    apply = sub.add_parser("apply", help="apply a stock file to a dataset")
    apply.add_argument("--engine", type=EngineKind, default=EngineKind.MEMORY_PARALLEL,
                       choices=list(EngineKind), metavar="{" + ",".join(e.value for e in EngineKind) + "}")
    apply.add_argument("--threads", type=_positive, default=None)
    apply.add_argument("--dataset", required=True)
    apply.add_argument("--stock", required=True)
    apply.add_argument("--out", required=True)
    apply.add_argument("--insert-missing", action="store_true")
    apply.add_argument("--flush-every", type=_positive, default=1)
    apply.set_defaults(func=cmd_apply)

    bch = sub.add_parser("bench", help="run the size x engine x threads benchmark")
    bch.add_argument("--engine", type=EngineKind, action="append",
                     choices=list(EngineKind), metavar="ENGINE", help="repeatable; default: both memory engines")
    bch.add_argument("--threads", type=_int_list, default=None, help="comma-separated thread counts")
    bch.add_argument("--sizes", type=_int_list, default=list(bench.DEFAULT_SIZES))
    bch.add_argument("--seed", type=int, default=0)
    bch.add_argument("--repeats", type=_positive, default=1)
    bch.add_argument("--flush-every", type=_positive, default=1)
    bch.add_argument("--baseline-cap", type=_count, default=100_000)
    bch.add_argument("--out", default="bench", help="output prefix; writes PREFIX.csv and PREFIX.svg")
    bch.set_defaults(func=cmd_bench)

    ver = sub.add_parser("verify", help="check all engines agree on a generated dataset")
    ver.add_argument("--count", type=_count, default=10_000)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--threads", type=_positive, default=None)
    ver.add_argument("--flush-every", type=_positive, default=1)
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if getattr(args, "threads", 0) is None:
        try:
            threads = default_threads()
        except argparse.ArgumentTypeError as exc:
            _err(str(exc))
            return EXIT_ENV
        if threads < 1:
            _err(f"{THREADS_ENV} must be >= 1")
            return EXIT_ENV
        args.threads = [threads] if args.command == "bench" else threads
    try:
        return args.func(args)
    except ValueError as exc:  # invalid configuration, e.g. a count beyond the key space
        _err(str(exc))
        return EXIT_ENV


if __name__ == "__main__":
    sys.exit(main())
