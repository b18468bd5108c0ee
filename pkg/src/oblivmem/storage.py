"""Untrusted block stores: passive byte containers with raw I/O accounting.

A store holds the buckets of one tree.  Bucket record layout (fixed
stride, heap order: node i has children 2i+1 and 2i+2):

    offset 0   epoch       u64 big-endian
    offset 8   slots       (Z + S) ciphertext slots of slot_len bytes

The store never interprets its contents.  Reads and writes are tallied
into counters (and a short debugging deque of fragments); the logical
TraceEvent for a batch is emitted by the ORAM client, not here.

File backend layout: a 32-byte header

    magic "OBMS" | version u16 | tree u8 | pad u8 | L u16 | Z u16 |
    S u16 | block_size u32 | reserved

followed by the bucket records at HEADER_LEN + index * bucket_len.
"""

from __future__ import annotations

import os
import struct
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

from .trace import StoreId

MAGIC = b"OBMS"
FORMAT_VERSION = 1
HEADER_LEN = 32
AEAD_TAG_LEN = 16
BUCKET_EPOCH_LEN = 8


class StorageError(Exception):
    pass


class UnknownBucket(StorageError):
    pass


class SizeMismatch(StorageError):
    pass


@dataclass(frozen=True)
class BucketId:
    tree: StoreId
    index: int


@dataclass(frozen=True)
class TreeGeometry:
    """Public shape of one tree: depth L, Z real + S dummy slots per bucket."""

    depth: int
    real_slots: int
    dummy_slots: int
    block_size: int

    @property
    def num_leaves(self) -> int:
        return 1 << self.depth

    @property
    def num_buckets(self) -> int:
        return (1 << (self.depth + 1)) - 1

    @property
    def slots_per_bucket(self) -> int:
        return self.real_slots + self.dummy_slots

    @property
    def slot_len(self) -> int:
        return self.block_size + AEAD_TAG_LEN

    @property
    def bucket_len(self) -> int:
        return BUCKET_EPOCH_LEN + self.slots_per_bucket * self.slot_len

    def slot_offset(self, slot: int) -> int:
        return BUCKET_EPOCH_LEN + slot * self.slot_len


@dataclass
class IoCounters:
    bytes_read: int = 0
    bytes_written: int = 0
    reads: int = 0
    writes: int = 0


class BucketStore:
    """Shared bookkeeping for both backends."""

    def __init__(self, tree: StoreId, geometry: TreeGeometry, raw_log_size: int = 256):
        self.tree = tree
        self.geometry = geometry
        self.counters = IoCounters()
        # Debug-only fragment log; never part of equivalence checks.
        self.raw_log: deque = deque(maxlen=raw_log_size)
        # Hot-path copies of the derived geometry values.
        self._bucket_len = geometry.bucket_len
        self._slot_len = geometry.slot_len
        self._num_buckets = geometry.num_buckets

    def _check_index(self, index: int) -> None:
        if not 0 <= index < self.geometry.num_buckets:
            raise UnknownBucket(f"bucket {index} out of range for tree {self.tree.value}")

    def _note(self, op: str, index: int, nbytes: int) -> None:
        self.raw_log.append((op, index, nbytes))
        if op == "r":
            self.counters.bytes_read += nbytes
            self.counters.reads += 1
        else:
            self.counters.bytes_written += nbytes
            self.counters.writes += 1

    # -- interface -----------------------------------------------------
    def read_buckets(self, indices: Sequence[int]) -> list[bytes]:
        raise NotImplementedError

    def read_slots(self, refs: Sequence[tuple[int, int]], want: int | None = None) -> list:
        """Fetch one slot per ref.  The protocol discards all but the
        consumed slot, so backends may return None for entries other
        than `want` provided the transfer is still accounted; the file
        backend always reads physically."""
        raise NotImplementedError

    def write_buckets(self, pairs: Iterable[tuple[int, bytes]]) -> None:
        raise NotImplementedError

    @property
    def store_bytes(self) -> int:
        return self.geometry.num_buckets * self.geometry.bucket_len


class MemoryBucketStore(BucketStore):
    """One flat bytearray; the default backend for tests and replays."""

    def __init__(self, tree: StoreId, geometry: TreeGeometry, **kw):
        super().__init__(tree, geometry, **kw)
        self._buf = bytearray(geometry.num_buckets * geometry.bucket_len)

    def read_buckets(self, indices):
        blen = self._bucket_len
        nb = self._num_buckets
        buf = self._buf
        out = []
        count = 0
        for i in indices:
            if not 0 <= i < nb:
                raise UnknownBucket(f"bucket {i} out of range for tree {self.tree.value}")
            off = i * blen
            out.append(bytes(buf[off : off + blen]))
            count += 1
        self.counters.bytes_read += count * blen
        self.counters.reads += count
        self.raw_log.append(("r", "buckets", count * blen))
        return out

    def read_slots(self, refs, want=None):
        buf = self._buf
        blen = self._bucket_len
        slen = self._slot_len
        n = len(refs)
        self.counters.bytes_read += n * slen
        self.counters.reads += n
        self.raw_log.append(("r", "slots", n * slen))
        if want is not None:
            out = [None] * n
            i, s = refs[want]
            off = i * blen + BUCKET_EPOCH_LEN + s * slen
            out[want] = bytes(buf[off : off + slen])
            return out
        out = []
        for i, s in refs:
            off = i * blen + BUCKET_EPOCH_LEN + s * slen
            out.append(bytes(buf[off : off + slen]))
        return out

    def write_buckets(self, pairs):
        blen = self._bucket_len
        nb = self._num_buckets
        staged = []
        for i, data in pairs:
            if not 0 <= i < nb:
                raise UnknownBucket(f"bucket {i} out of range for tree {self.tree.value}")
            if len(data) != blen:
                raise SizeMismatch(
                    f"bucket {i}: {len(data)} bytes, expected {blen}"
                )
            staged.append((i, data))
        # All-or-nothing per call.
        buf = self._buf
        for i, data in staged:
            off = i * blen
            buf[off : off + blen] = data
        self.counters.bytes_written += len(staged) * blen
        self.counters.writes += len(staged)
        self.raw_log.append(("w", "buckets", len(staged) * blen))

    # test/debug access to raw stored bytes (the adversary's view)
    def bucket_bytes(self, index: int) -> bytes:
        g = self.geometry
        self._check_index(index)
        off = index * g.bucket_len
        return bytes(self._buf[off : off + g.bucket_len])

    def corrupt(self, index: int, byte_offset: int, bit: int) -> None:
        """Flip one bit inside a stored bucket (adversarial mutation)."""
        g = self.geometry
        self._check_index(index)
        off = index * g.bucket_len + byte_offset
        self._buf[off] ^= 1 << bit


class FileBucketStore(BucketStore):
    """Single-file backend with the documented fixed-stride layout."""

    _TREE_CODE = {StoreId.ANN: 0, StoreId.DATA: 1}

    def __init__(self, path: str, tree: StoreId, geometry: TreeGeometry, **kw):
        super().__init__(tree, geometry, **kw)
        self.path = path
        if os.path.exists(path):
            self._fh = open(path, "r+b")
            self._check_header()
        else:
            self._fh = open(path, "w+b")
            self._fh.write(self._header())
            self._fh.truncate(HEADER_LEN + geometry.num_buckets * geometry.bucket_len)
            self._fh.flush()

    def _header(self) -> bytes:
        g = self.geometry
        head = struct.pack(
            ">4sHBBHHHI",
            MAGIC,
            FORMAT_VERSION,
            self._TREE_CODE[self.tree],
            0,
            g.depth,
            g.real_slots,
            g.dummy_slots,
            g.block_size,
        )
        return head.ljust(HEADER_LEN, b"\0")

    def _check_header(self) -> None:
        self._fh.seek(0)
        head = self._fh.read(HEADER_LEN)
        if head != self._header():
            raise StorageError(f"{self.path}: header does not match configuration")

    def read_buckets(self, indices):
        g = self.geometry
        out = []
        for i in indices:
            self._check_index(i)
            self._fh.seek(HEADER_LEN + i * g.bucket_len)
            data = self._fh.read(g.bucket_len)
            self._note("r", i, g.bucket_len)
            out.append(data)
        return out

    def read_slots(self, refs, want=None):
        g = self.geometry
        out = []
        for i, s in refs:
            self._check_index(i)
            self._fh.seek(HEADER_LEN + i * g.bucket_len + g.slot_offset(s))
            out.append(self._fh.read(g.slot_len))
            self._note("r", i, g.slot_len)
        return out

    def write_buckets(self, pairs):
        g = self.geometry
        staged = []
        for i, data in pairs:
            self._check_index(i)
            if len(data) != g.bucket_len:
                raise SizeMismatch(
                    f"bucket {i}: {len(data)} bytes, expected {g.bucket_len}"
                )
            staged.append((i, data))
        for i, data in staged:
            self._fh.seek(HEADER_LEN + i * g.bucket_len)
            self._fh.write(data)
            self._note("w", i, g.bucket_len)

    def flush(self) -> None:
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    def bucket_bytes(self, index: int) -> bytes:
        return self.read_buckets_quiet(index)

    def read_buckets_quiet(self, index: int) -> bytes:
        g = self.geometry
        self._check_index(index)
        self._fh.seek(HEADER_LEN + index * g.bucket_len)
        return self._fh.read(g.bucket_len)

    def corrupt(self, index: int, byte_offset: int, bit: int) -> None:
        g = self.geometry
        self._check_index(index)
        pos = HEADER_LEN + index * g.bucket_len + byte_offset
        self._fh.seek(pos)
        b = self._fh.read(1)[0]
        self._fh.seek(pos)
        self._fh.write(bytes([b ^ (1 << bit)]))
