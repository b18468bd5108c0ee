"""Observable-event log shared by the untrusted stores and the controller.

Everything an adversarial host can see is reduced to two event kinds:
a fixed-size inter-enclave call, or one batched store access with a
public batch size.  Structural comparisons use only (kind, store,
batch_size); byte_count exists for bandwidth accounting.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional


class EventKind(str, Enum):
    CALL = "InterEnclaveCall"
    ORAM = "OramAccess"


class StoreId(str, Enum):
    ANN = "ANN"
    DATA = "Data"


@dataclass(frozen=True)
class TraceEvent:
    kind: EventKind
    store: Optional[StoreId]
    batch_size: Optional[int]
    byte_count: int
    seq: int

    def shape(self) -> tuple:
        """The public structure used for trace equivalence."""
        return (self.kind, self.store, self.batch_size)

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind.value,
                "store": self.store.value if self.store is not None else None,
                "batch_size": self.batch_size,
                "byte_count": self.byte_count,
                "seq": self.seq,
            }
        )


class TraceLog:
    """Append-only event log; seq strictly increases for the log's lifetime.

    Thread-safe: several per-user controllers may share one log.  drain()
    hands back and forgets the accumulated events without resetting seq,
    so long replays can consume the log incrementally.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._events: list[TraceEvent] = []
        self._next_seq = 0

    def record_call(self, byte_count: int) -> TraceEvent:
        return self._append(EventKind.CALL, None, None, byte_count)

    def record_oram(self, store: StoreId, batch_size: int, byte_count: int) -> TraceEvent:
        return self._append(EventKind.ORAM, store, batch_size, byte_count)

    def _append(self, kind, store, batch_size, byte_count) -> TraceEvent:
        with self._lock:
            ev = TraceEvent(kind, store, batch_size, int(byte_count), self._next_seq)
            self._next_seq += 1
            self._events.append(ev)
            return ev

    def events(self) -> list[TraceEvent]:
        with self._lock:
            return list(self._events)

    def events_since(self, seq: int) -> list[TraceEvent]:
        with self._lock:
            return [e for e in self._events if e.seq >= seq]

    def drain(self) -> list[TraceEvent]:
        with self._lock:
            out = self._events
            self._events = []
            return out

    @property
    def next_seq(self) -> int:
        with self._lock:
            return self._next_seq

    def to_jsonl(self) -> str:
        return "\n".join(e.to_json() for e in self.events())

    def __len__(self) -> int:
        with self._lock:
            return len(self._events)


def shapes(events) -> list[tuple]:
    return [e.shape() for e in events]


def structurally_equivalent(a, b) -> tuple[bool, int]:
    """Compare two event lists positionally.

    Returns (True, -1) when equivalent, else (False, index of the first
    divergence); a length mismatch diverges at the shorter length.
    """
    n = min(len(a), len(b))
    for i in range(n):
        if a[i].shape() != b[i].shape():
            return False, i
    if len(a) != len(b):
        return False, n
    return True, -1
