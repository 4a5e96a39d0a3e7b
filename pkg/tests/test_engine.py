import random
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SAMPLE_CSV
from oracles import fnv1a64_ref, generate_ref
from shardstock import codec, engine
from shardstock.core import DeltaBatch, DeltaEntry, Record, Shard, build_store, lookup
from shardstock.engine import EngineKind, apply_disk_baseline, apply_parallel, apply_serial, route_deltas, run_apply

K = b"9783652774577"


def deltas_of(*rows):
    return DeltaBatch.from_entries(DeltaEntry(k, p, q, i) for i, (k, p, q) in enumerate(rows))


def random_deltas(rng, n, pool):
    return DeltaBatch(
        rng.choice(pool, size=n), rng.integers(0, 10**9, n), rng.integers(0, 10**9, n)
    )


def test_route_single_queue_is_input():
    d = deltas_of((K, 1, 1), ("9780000004381", 2, 2), (K, 3, 3))
    (q,) = route_deltas(d, 1)
    assert q == d


def test_route_empty():
    queues = route_deltas(DeltaBatch.empty(), 12)
    assert len(queues) == 12 and all(len(q) == 0 for q in queues)


def test_route_10k_sort_and_compare():
    rng = np.random.default_rng(11)
    d = random_deltas(rng, 10_000, np.arange(9780000000000, 9780000003000))
    queues = route_deltas(d, 12)
    assert sum(len(q) for q in queues) == len(d)
    for j, q in enumerate(queues):
        assert q.ordinals.tolist() == sorted(q.ordinals.tolist())
        assert all(fnv1a64_ref(b"%013d" % k) % 12 == j for k in q.keys.tolist())
    merged = sorted((e for q in queues for e in q), key=lambda e: e.source_ordinal)
    assert merged == list(d)


def test_route_rejects_zero():
    with pytest.raises(ValueError):
        route_deltas(DeltaBatch.empty(), 0)


def test_serial_published_sample():
    store = build_store([Record(K, 116, 91)], 3)
    report = apply_serial(store, deltas_of((K, 393, 495)))
    assert report.counts() == (1, 0, 0, 1)
    assert lookup(store, K) == (393, 495)


def test_serial_empty_deltas(sample_records):
    store = build_store(sample_records, 2)
    before = codec.write_dataset_csv(store)
    report = apply_serial(store, DeltaBatch.empty())
    assert report.counts() == (0, 0, 0, 0)
    assert codec.write_dataset_csv(store) == before


def test_serial_last_write_wins():
    store = build_store([Record(K, 5, 5)], 1)
    apply_serial(store, deltas_of((K, 100, 1), (K, 200, 2)))
    assert lookup(store, K) == (200, 2)


def test_serial_missing_and_insert():
    store = build_store([], 2)
    assert apply_serial(store, deltas_of((K, 1, 1))).counts() == (0, 1, 0, 1)
    assert len(store) == 0
    assert apply_serial(store, deltas_of((K, 1, 1), (K, 2, 2)), insert_missing=True).counts() == (1, 0, 1, 2)
    assert lookup(store, K) == (2, 2)


def test_parallel_one_worker_matches_serial(sample_records):
    d = deltas_of(*[(r.key, r.price + 1, r.quantity + 1) for r in sample_records], (K, 1, 1))
    a, b = build_store(sample_records, 1), build_store(sample_records, 1)
    ra, rb = apply_serial(a, d), apply_parallel(b, d, 1)
    assert ra.counts() == rb.counts() == (15, 1, 0, 16)
    assert a.snapshot() == b.snapshot()


def test_parallel_sample_full_coverage_n4(sample_records):
    d = deltas_of(*[(r.key, r.price * 2, r.quantity + 7) for r in reversed(sample_records)])
    serial, par = build_store(sample_records, 4), build_store(sample_records, 4)
    apply_serial(serial, d)
    report = apply_parallel(par, d, 4)
    assert report.counts() == (15, 0, 0, 15)
    assert codec.write_dataset_csv(par) == codec.write_dataset_csv(serial) != SAMPLE_CSV


def test_parallel_argument_checks(sample_records):
    store = build_store(sample_records, 4)
    with pytest.raises(ValueError):
        apply_parallel(store, DeltaBatch.empty(), 0)
    with pytest.raises(ValueError):
        apply_parallel(store, DeltaBatch.empty(), 3)


def test_parallel_worker_error_propagates(monkeypatch, sample_records):
    store = build_store(sample_records, 2)
    original = Shard.apply_batch

    def boom(self, *args, **kwargs):
        if self.index == 1:
            raise RuntimeError("worker failed")
        return original(self, *args, **kwargs)

    monkeypatch.setattr(Shard, "apply_batch", boom)
    with pytest.raises(RuntimeError, match="worker failed"):
        apply_parallel(store, deltas_of((K, 1, 1)), 2)


rows_st = st.lists(
    st.tuples(st.integers(9780000000000, 9780000000400), st.integers(0, 10**6), st.integers(0, 999)), max_size=256
)
deltas_st = st.lists(
    st.tuples(st.integers(9780000000000, 9780000000500), st.integers(0, 10**6), st.integers(0, 999)), max_size=512
)


@settings(max_examples=200)
@given(rows_st, deltas_st, st.integers(1, 8), st.integers(1, 8), st.booleans())
def test_parallel_equals_serial_oracle(rows, drows, n, n_serial, insert):
    records = [Record(*r) for r in rows]
    d = deltas_of(*drows)
    serial, par = build_store(records, n_serial), build_store(records, n)
    rs = apply_serial(serial, d, insert)
    rp = apply_parallel(par, d, n, insert)
    assert rs.counts() == rp.counts()
    assert rp.applied + rp.missing_key + rp.inserted == rp.total_deltas == len(d)
    assert serial.snapshot() == par.snapshot()
    final = {k: (p, q) for k, p, q in drows}  # last write in stream order
    for k, v in final.items():
        if insert or any(r[0] == k for r in rows):
            assert lookup(par, k) == v


# -- disk baseline -------------------------------------------------------------


def write_fixed(path, records):
    path.write_bytes(codec.write_fixed_store(records))
    return path


def test_disk_single_hit(tmp_path):
    f = write_fixed(tmp_path / "db.fix", [Record("9780000004381", 116, 91)])
    report = apply_disk_baseline(f, deltas_of(("9780000004381", 393, 495)))
    assert report.counts() == (1, 0, 0, 1)
    data = f.read_bytes()
    assert len(data) == 48
    assert data[16 + 14:16 + 26] == (393).to_bytes(8, "little") + (495).to_bytes(4, "little")


def test_disk_miss_leaves_file(tmp_path, sample_records):
    f = write_fixed(tmp_path / "db.fix", sample_records)
    before = f.read_bytes()
    report = apply_disk_baseline(f, deltas_of((K, 1, 1), ("9780000000000", 1, 1), ("9999999999999", 1, 1)))
    assert report.counts() == (0, 3, 0, 3)
    assert f.read_bytes() == before


def test_disk_rejects_corrupt(tmp_path, sample_records):
    f = tmp_path / "db.fix"
    f.write_bytes(b"NOTMAGIC" + codec.write_fixed_store(sample_records)[8:])
    with pytest.raises(codec.FormatError):
        apply_disk_baseline(f, deltas_of((K, 1, 1)))
    f.write_bytes(codec.write_fixed_store(sample_records)[:-5])
    with pytest.raises(codec.FormatError):
        apply_disk_baseline(f, deltas_of((K, 1, 1)))
    with pytest.raises(ValueError):
        apply_disk_baseline(f, DeltaBatch.empty(), flush_every=0)


@pytest.mark.parametrize("flush_every", [1, 64])
def test_disk_equals_serial_10k(tmp_path, flush_every):
    dataset, stock = generate_ref(10_000, 5)
    records, _ = codec.load_dataset_csv(dataset)
    deltas = codec.parse_stock_stream(stock).entries
    f = write_fixed(tmp_path / "db.fix", records)
    report = apply_disk_baseline(f, deltas, flush_every=flush_every)
    store = build_store(records, 3)
    serial = apply_serial(store, deltas)
    assert report.counts() == serial.counts() == (10_000, 0, 0, 10_000)
    assert codec.read_fixed_store(f.read_bytes()) == store.snapshot()


def test_disk_last_write_wins(tmp_path, sample_records):
    f = write_fixed(tmp_path / "db.fix", sample_records)
    apply_disk_baseline(f, deltas_of(("9780000082215", 1, 1), ("9780000082215", 2, 2)), flush_every=5)
    assert codec.read_fixed_record(open(f, "rb"), 14) == Record("9780000082215", 2, 2)


# -- pipeline ------------------------------------------------------------------


@pytest.fixture
def gen10k(tmp_path):
    dataset, stock = generate_ref(10_000, 99)
    (tmp_path / "in.csv").write_bytes(dataset)
    (tmp_path / "in.dat").write_bytes(stock)
    return tmp_path


def test_run_apply_parallel_full_coverage(gen10k):
    rep = run_apply("memory_parallel", gen10k / "in.csv", gen10k / "in.dat", gen10k / "out.csv", 4)
    assert rep.apply.counts() == (10_000, 0, 0, 10_000)
    assert rep.records == 10_000
    assert rep.total_seconds == pytest.approx(rep.load_seconds + rep.apply_seconds + rep.writeback_seconds)
    assert min(rep.load_seconds, rep.apply_seconds, rep.writeback_seconds) >= 0


@pytest.mark.parametrize("kind", list(EngineKind))
def test_run_apply_empty_stock_is_identity(tmp_path, kind):
    (tmp_path / "in.csv").write_bytes(SAMPLE_CSV)
    (tmp_path / "empty.dat").write_bytes(b"")
    rep = run_apply(kind, tmp_path / "in.csv", tmp_path / "empty.dat", tmp_path / "out", 3)
    assert rep.apply.counts() == (0, 0, 0, 0)
    assert engine.dataset_to_csv(tmp_path / "out") == SAMPLE_CSV


def test_all_engines_agree_and_are_deterministic(gen10k):
    outputs = {}
    for kind in EngineKind:
        for attempt in range(2):
            out = gen10k / f"{kind.value}.{attempt}"
            rep = run_apply(kind, gen10k / "in.csv", gen10k / "in.dat", out, 3, flush_every=50)
            assert rep.apply.counts() == (10_000, 0, 0, 10_000)
            outputs[(kind, attempt)] = out.read_bytes()
        assert outputs[(kind, 0)] == outputs[(kind, 1)]
    canonical = {engine.dataset_to_csv(gen10k / f"{k.value}.0") for k in EngineKind}
    assert len(canonical) == 1
    assert outputs[(EngineKind.MEMORY_SERIAL, 0)] in canonical


def test_run_apply_accepts_fixed_dataset(tmp_path, sample_records):
    (tmp_path / "in.fix").write_bytes(codec.write_fixed_store(sample_records))
    (tmp_path / "s.dat").write_bytes(b"9780000004381$9.99$1$\n")
    rep = run_apply("memory_serial", tmp_path / "in.fix", tmp_path / "s.dat", tmp_path / "out.csv", 2)
    assert rep.apply.applied == 1
    assert b"9780000004381,9.99,1\n" in (tmp_path / "out.csv").read_bytes()


def test_run_apply_insert_missing(tmp_path):
    (tmp_path / "in.csv").write_bytes(SAMPLE_CSV)
    (tmp_path / "s.dat").write_bytes(b"9783652774577$3.93$495$\n")
    rep = run_apply("memory_parallel", tmp_path / "in.csv", tmp_path / "s.dat", tmp_path / "o.csv", 2, insert_missing=True)
    assert rep.apply.counts() == (0, 0, 1, 1)
    assert rep.records == 16
    rep = run_apply("disk_baseline", tmp_path / "in.csv", tmp_path / "s.dat", tmp_path / "o.fix", 2, insert_missing=True)
    assert rep.apply.counts() == (0, 1, 0, 1)


def test_run_apply_errors(tmp_path):
    (tmp_path / "in.csv").write_bytes(SAMPLE_CSV)
    (tmp_path / "bad.dat").write_bytes(b"junk\n" * 3 + b"9780000004381$1.00$1$\n")
    with pytest.raises(FileNotFoundError):
        run_apply("memory_serial", tmp_path / "in.csv", tmp_path / "nope.dat", tmp_path / "o", 1)
    with pytest.raises(ValueError):
        run_apply("memory_serial", tmp_path / "in.csv", tmp_path / "bad.dat", tmp_path / "o", 0)
    with pytest.raises(ValueError):
        run_apply("no_such_engine", tmp_path / "in.csv", tmp_path / "bad.dat", tmp_path / "o", 1)
    with pytest.raises(engine.MalformedInputError):
        run_apply("memory_serial", tmp_path / "in.csv", tmp_path / "bad.dat", tmp_path / "o", 1, max_malformed_ratio=0.5)
    rep = run_apply("memory_serial", tmp_path / "in.csv", tmp_path / "bad.dat", tmp_path / "o", 1)
    assert rep.stock_malformed == 3 and rep.apply.applied == 1


def test_count_conservation_random(tmp_path):
    rng = random.Random(4)
    for trial in range(20):
        rows = [Record(9780000000000 + rng.randrange(200), rng.randrange(1000), rng.randrange(10)) for _ in range(rng.randrange(50))]
        (tmp_path / "in.csv").write_bytes(codec.write_dataset_csv(build_store(rows, 1)))
        entries = [DeltaEntry(9780000000000 + rng.randrange(300), rng.randrange(1000), 1, i) for i in range(rng.randrange(80))]
        (tmp_path / "s.dat").write_bytes(codec.serialize_stock(entries))
        for kind in EngineKind:
            rep = run_apply(kind, tmp_path / "in.csv", tmp_path / "s.dat", tmp_path / "o", 1 + trial % 5, flush_every=100)
            a = rep.apply
            assert a.applied + a.missing_key + a.inserted == a.total_deltas == len(entries)
