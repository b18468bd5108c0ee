import pytest

from oblivmem.storage import (
    FileBucketStore,
    MemoryBucketStore,
    SizeMismatch,
    TreeGeometry,
    UnknownBucket,
)
from oblivmem.trace import StoreId, TraceLog


GEO = TreeGeometry(depth=3, real_slots=4, dummy_slots=5, block_size=272)


def make_bucket(geometry, fill=0xAB):
    return bytes([fill]) * geometry.bucket_len


def test_geometry_counts():
    assert GEO.num_buckets == 15
    assert GEO.num_leaves == 8
    assert GEO.slots_per_bucket == 9
    assert GEO.bucket_len == 8 + 9 * (272 + 16)


def test_bucket_count_closed_form_l14():
    g = TreeGeometry(depth=14, real_slots=4, dummy_slots=5, block_size=64)
    assert g.num_buckets == 32767  # 2^15 - 1


def test_write_then_read_roundtrip():
    store = MemoryBucketStore(StoreId.ANN, GEO)
    data = make_bucket(GEO)
    store.write_buckets([(3, data)])
    assert store.read_buckets([3]) == [data]
    # passive store: second read identical
    assert store.read_buckets([3]) == [data]


def test_path_read_length():
    store = MemoryBucketStore(StoreId.ANN, GEO)
    path = [0, 1, 3, 7]  # root to leaf for depth 3
    assert len(store.read_buckets(path)) == 4


def test_size_mismatch_rejected():
    store = MemoryBucketStore(StoreId.ANN, GEO)
    with pytest.raises(SizeMismatch):
        store.write_buckets([(0, b"short")])


def test_unknown_bucket():
    store = MemoryBucketStore(StoreId.ANN, GEO)
    with pytest.raises(UnknownBucket):
        store.read_buckets([GEO.num_buckets])
    with pytest.raises(UnknownBucket):
        store.write_buckets([(-1, make_bucket(GEO))])


def test_read_slots_matches_bucket_slice():
    store = MemoryBucketStore(StoreId.ANN, GEO)
    data = bytes(range(256)) * (GEO.bucket_len // 256) + bytes(GEO.bucket_len % 256)
    store.write_buckets([(2, data)])
    got = store.read_slots([(2, 0), (2, 4)])
    assert got[0] == data[8 : 8 + GEO.slot_len]
    off = GEO.slot_offset(4)
    assert got[1] == data[off : off + GEO.slot_len]


def test_io_counters_accumulate():
    store = MemoryBucketStore(StoreId.ANN, GEO)
    store.write_buckets([(0, make_bucket(GEO))])
    store.read_buckets([0, 1])
    store.read_slots([(0, 1)])
    assert store.counters.bytes_written == GEO.bucket_len
    assert store.counters.bytes_read == 2 * GEO.bucket_len + GEO.slot_len


def test_file_store_roundtrip(tmp_path):
    path = str(tmp_path / "tree.oram")
    store = FileBucketStore(path, StoreId.DATA, GEO)
    data = make_bucket(GEO, 0x5C)
    store.write_buckets([(7, data)])
    store.flush()
    store.close()

    reopened = FileBucketStore(path, StoreId.DATA, GEO)
    assert reopened.read_buckets([7]) == [data]
    assert reopened.read_slots([(7, 2)], want=0)[0] == data[GEO.slot_offset(2) : GEO.slot_offset(2) + GEO.slot_len]
    reopened.close()


def test_file_store_rejects_mismatched_header(tmp_path):
    path = str(tmp_path / "tree.oram")
    FileBucketStore(path, StoreId.DATA, GEO).close()
    other = TreeGeometry(depth=4, real_slots=4, dummy_slots=5, block_size=272)
    with pytest.raises(Exception):
        FileBucketStore(path, StoreId.DATA, other)


def test_trace_log_sequencing():
    log = TraceLog()
    log.record_call(4096)
    log.record_oram(StoreId.ANN, 200, 123)
    events = log.events()
    assert [e.seq for e in events] == [0, 1]
    assert events[1].shape()[2] == 200
    drained = log.drain()
    assert len(drained) == 2 and len(log) == 0
    log.record_call(4096)
    assert log.events()[0].seq == 2  # seq survives drain


def test_trace_jsonl_fields():
    log = TraceLog()
    log.record_oram(StoreId.DATA, 10, 999)
    line = log.to_jsonl()
    for field in ("kind", "store", "batch_size", "byte_count", "seq"):
        assert field in line
