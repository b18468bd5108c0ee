"""Bandwidth scaling bench: per-operation bytes across store sizes.

Per-operation bytes come from the OramAccess trace events, which carry
the online (fetch-phase) transfer of each batch; eviction write-back
traffic is deferrable maintenance and reported in its own column.  The
in-memory baseline keeps one flat encrypted record per entry and must
read the entire store on every query (read-modify-write on ingestion)
to match the access-pattern guarantee without an ORAM; the plaintext
baseline fetches exactly the requested blocks, the overhead floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..controller import ChunkIngest, Controller, SystemConfig
from ..kg import ChunkMeta
from ..trace import EventKind

# Desk bench profile: small fetch budgets sized for desk-scale stores
# (the production n=200 is tuned for ~0.5M-entry stores).
BENCH_CONFIG = SystemConfig(
    n=16,
    k=8,
    chunk_payload=1024,
    warmup_size=128,
    t_period=1 << 30,  # no summarization inside the measured loop
    dreaming=False,
)


@dataclass
class BenchRow:
    n_entries: int
    depth: int
    opal_query: float
    opal_ingest: float
    opal_query_maintenance: float
    inmemory_query: int
    inmemory_ingest: int
    plaintext_query: int
    plaintext_ingest: int

    @property
    def ratio(self) -> float:
        return self.inmemory_query / self.opal_query

    def as_csv(self) -> str:
        return (
            f"{self.n_entries},{self.depth},{self.opal_query:.0f},{self.opal_ingest:.0f},"
            f"{self.opal_query_maintenance:.0f},{self.inmemory_query},{self.inmemory_ingest},"
            f"{self.plaintext_query},{self.plaintext_ingest},{self.ratio:.2f}"
        )


CSV_HEADER = (
    "n_entries,depth,opal_query_bytes,opal_ingest_bytes,opal_query_maintenance_bytes,"
    "inmemory_query_bytes,inmemory_ingest_bytes,plaintext_query_bytes,"
    "plaintext_ingest_bytes,ratio"
)


class InMemoryBaseline:
    """Flat encrypted store loaded wholesale into the enclave per query."""

    def __init__(self, config: SystemConfig):
        self.entry_bytes = (config.embed_dim * 4 + 16) + (config.chunk_payload + 16)
        self.store = bytearray()

    def ingest(self) -> int:
        # Read-modify-write of the full encrypted database, plus the new entry.
        moved = 2 * len(self.store) + self.entry_bytes
        self.store.extend(b"\0" * self.entry_bytes)
        return moved

    def query(self) -> int:
        return len(self.store)


class PlaintextBaseline:
    """No encryption, no access-pattern protection: fetches exactly the
    requested blocks."""

    def __init__(self, config: SystemConfig):
        self.vec_bytes = config.embed_dim * 4
        self.chunk_bytes = config.chunk_payload
        self.n = config.n
        self.k = config.k

    def query(self) -> int:
        return self.n * self.vec_bytes + self.k * self.chunk_bytes

    def ingest(self) -> int:
        return self.vec_bytes + self.chunk_bytes


def depth_for(entries: int, z: int) -> int:
    """Smallest depth whose usable capacity (Z * leaves) holds `entries`."""
    return max(2, math.ceil(math.log2(max(1, entries) / z)))


def _preload_and_measure(
    config: SystemConfig, n_entries: int, queries: int, seed: int
) -> tuple[float, float, float]:
    rng = np.random.default_rng(seed)
    ctrl = Controller(config)
    words = ["kelp", "ember", "garnet", "prairie", "timber", "saffron", "lumen"]
    ctr = 0
    fill = " ".join(["pad"] * 150)  # comfortably beyond one chunk payload
    for i in range(n_entries):
        ctr += 1
        text = f"note ref{i:06d} {words[i % len(words)]} {fill}"
        meta = ChunkMeta(chunk_id=i, artifact_id=i, modality="document",
                         timestamp=1_767_225_600.0 + i)
        ctrl.ingest(ChunkIngest(text, meta), ctr)
    ctrl.trace.drain()

    q_bytes = []
    maint = []
    for q in range(queries):
        ctr += 1
        m0 = ctrl.oram_ann.maintenance_bytes + ctrl.oram_data.maintenance_bytes
        ctrl.query(f"note ref{int(rng.integers(n_entries)):06d} {words[q % len(words)]}", ctr)
        ev = ctrl.trace.drain()
        q_bytes.append(sum(e.byte_count for e in ev if e.kind is EventKind.ORAM))
        maint.append(
            ctrl.oram_ann.maintenance_bytes + ctrl.oram_data.maintenance_bytes - m0
        )

    i_bytes = []
    for j in range(8):
        ctr += 1
        meta = ChunkMeta(chunk_id=n_entries + j, artifact_id=n_entries + j,
                         modality="document", timestamp=1_767_225_600.0)
        ctrl.ingest(ChunkIngest(f"extra ref{n_entries + j:06d} {fill}", meta), ctr)
        ev = ctrl.trace.drain()
        i_bytes.append(sum(e.byte_count for e in ev if e.kind is EventKind.ORAM))

    return float(np.mean(q_bytes)), float(np.mean(i_bytes)), float(np.mean(maint))


def bench_bandwidth(
    sizes: list[int],
    config: Optional[SystemConfig] = None,
    queries: int = 5,
    seed: int = 7,
) -> list[BenchRow]:
    base = config or BENCH_CONFIG
    rows = []
    for n_entries in sizes:
        depth = depth_for(2 * n_entries, base.bucket_real_slots)  # headroom for churn
        cfg = replace(
            base,
            depth_ann=depth,
            depth_data=depth,
            n_target=max(base.n_target, 2 * n_entries),
        )
        oq, oi, om = _preload_and_measure(cfg, n_entries, queries, seed)

        mem = InMemoryBaseline(cfg)
        for _ in range(n_entries):
            mem.ingest()
        mem_ingest = mem.ingest()
        mem.store = mem.store[: n_entries * mem.entry_bytes]
        mem_query = mem.query()

        plain = PlaintextBaseline(cfg)
        rows.append(
            BenchRow(
                n_entries=n_entries,
                depth=depth,
                opal_query=oq,
                opal_ingest=oi,
                opal_query_maintenance=om,
                inmemory_query=mem_query,
                inmemory_ingest=mem_ingest,
                plaintext_query=plain.query(),
                plaintext_ingest=plain.ingest(),
            )
        )
    return rows


def fit_log(rows: list[BenchRow]) -> tuple[float, float, float]:
    """Least squares of opal query bytes on log2(N); returns (a, b, R^2)."""
    x = np.array([math.log2(r.n_entries) for r in rows])
    y = np.array([r.opal_query for r in rows])
    a, b = np.polyfit(x, y, 1)
    pred = a * x + b
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def fit_linear(rows: list[BenchRow]) -> tuple[float, float, float]:
    """Least squares of in-memory query bytes on N; returns (a, b, R^2)."""
    x = np.array([r.n_entries for r in rows], dtype=float)
    y = np.array([r.inmemory_query for r in rows], dtype=float)
    a, b = np.polyfit(x, y, 1)
    pred = a * x + b
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2
