"""Retention policy and the maintenance callback that rides inside
ordinary ORAM accesses.

Every request advances a logical clock.  Each stored item carries a
deadline measured in logical operations; deadlines refresh when the item
is explicitly fetched for answer synthesis, so recently useful items
survive while cold ones age out.  Expiry, deadline refresh, and pending
index corrections all execute on blocks an ordinary access already
materialized, so maintenance contributes zero observable events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .oram import DreamContext
from .trace import StoreId


class DomainError(Exception):
    pass


@dataclass(frozen=True)
class RetentionConfig:
    n_target: int  # steady-state store size, in chunks
    write_ratio: float  # fraction of operations that are ingests
    chunks_per_item: float  # mean chunks per logical item
    rerank_k: int  # reranking budget K

    @property
    def eta(self) -> float:
        """Read-refresh correction: 1 + (1 - w) ln K."""
        return 1.0 + (1.0 - self.write_ratio) * math.log(self.rerank_k)

    @property
    def ttl(self) -> int:
        return compute_ttl(self)

    @property
    def target_lifetime(self) -> float:
        """Expected lifetime in logical ops: turnover time of the store."""
        return self.n_target / (self.write_ratio * self.chunks_per_item)


def compute_ttl(cfg: RetentionConfig) -> int:
    """ceil(N / (w * c * eta)) with eta = 1 + (1 - w) ln K."""
    if not 0.0 < cfg.write_ratio <= 1.0:
        raise DomainError(f"write ratio must be in (0, 1], got {cfg.write_ratio}")
    if cfg.chunks_per_item < 1.0:
        raise DomainError(f"chunks per item must be >= 1, got {cfg.chunks_per_item}")
    if cfg.rerank_k < 1:
        raise DomainError(f"rerank budget must be >= 1, got {cfg.rerank_k}")
    if cfg.n_target < 1:
        raise DomainError(f"target size must be >= 1, got {cfg.n_target}")
    return math.ceil(cfg.n_target / (cfg.write_ratio * cfg.chunks_per_item * cfg.eta))


@dataclass
class LogicalClock:
    t: int = 0

    def tick(self) -> int:
        self.t += 1
        return self.t


@dataclass
class DreamReport:
    expired: int = 0
    refreshed: int = 0
    resolved: int = 0
    changed: int = 0
    residents_seen: int = 0

    def merge(self, other: "DreamReport") -> None:
        self.expired += other.expired
        self.refreshed += other.refreshed
        self.resolved += other.resolved
        self.changed += other.changed
        self.residents_seen += other.residents_seen


class DreamPolicy:
    """Bridges the per-access resident set to index/graph maintenance.

    Deadline refresh applies only to explicitly requested data-store
    reads (the K synthesized items); the eta derivation models exactly
    that refresh rate, and refreshing the wider candidate fetch would
    inflate lifetimes beyond the retention target.  Incidental residents
    are expiry-eligible in both stores once the store is at capacity.
    """

    def __init__(self, index, kg, clock: LogicalClock, retention: RetentionConfig):
        self.index = index
        self.kg = kg
        self.clock = clock
        self.retention = retention
        self.enabled = True
        self.oram_ann = None  # wired by the controller
        self.oram_data = None
        self.report = DreamReport()
        self.ingested_at: dict[int, int] = {}
        self.expired_lifetimes: list[float] = []
        self.deleted_ids: list[int] = []
        self.insert_log: list[tuple[int, bytes]] = []  # drained by the replay harness

    def register_insert(self, item_id: int, vec_bytes: bytes = b"") -> None:
        self.ingested_at[item_id] = self.clock.t
        self.insert_log.append((item_id, vec_bytes))

    def active_entries(self) -> int:
        """Live items whose deadline has not lapsed."""
        now = self.clock.t
        return sum(1 for d in self.index.ttl_expiry.values() if d > now)

    def __call__(self, ctx: DreamContext) -> None:
        if not self.enabled:
            return
        expiry = self.index.ttl_expiry
        now = self.clock.t
        ttl = self.index.ttl
        at_capacity = self.index.live_count >= self.retention.n_target
        refresh = ctx.store is StoreId.DATA and ctx.op == "read"
        requested = ctx.requested_present

        to_delete = []
        for item_id in ctx.residents:
            deadline = expiry.get(item_id)
            if deadline is None:
                continue  # already deleted under another id's dream
            self.report.residents_seen += 1
            if item_id in requested:
                if refresh:
                    expiry[item_id] = now + ttl
                    self.report.refreshed += 1
                continue  # in-flight items are never expired mid-request
            if at_capacity and now >= deadline:
                to_delete.append(item_id)

        for item_id in to_delete:
            self._delete(item_id)

        if ctx.store is StoreId.ANN:
            vectors = {
                item_id: np.frombuffer(payload, dtype=np.float32)
                for item_id, payload in ctx.residents.items()
                if payload is not None
            }
            if vectors:
                if self.index.pending:
                    resolved, changed = self.index.resolve_pending(vectors)
                    self.report.resolved += resolved
                    self.report.changed += changed
                self.index.refresh_codes(vectors)

    def _delete(self, item_id: int) -> None:
        """Logical deletion: metadata only, slots reclaimed by later rewrites."""
        deadline = self.index.ttl_expiry.get(item_id)
        born = self.ingested_at.pop(item_id, None)
        if deadline is not None and born is not None:
            self.expired_lifetimes.append(float(deadline - born))
        self.index.remove(item_id)
        self.kg.remove_chunk(item_id)
        if self.oram_ann is not None:
            self.oram_ann.forget(item_id)
        if self.oram_data is not None:
            self.oram_data.forget(item_id)
        self.report.expired += 1
        self.deleted_ids.append(item_id)

    # ------------------------------------------------------------------
    def get_state(self) -> dict:
        return {
            "enabled": self.enabled,
            "ingested_at": dict(self.ingested_at),
            "expired_lifetimes": list(self.expired_lifetimes),
            "report": self.report,
        }

    def set_state(self, state: dict) -> None:
        self.enabled = state["enabled"]
        self.ingested_at = dict(state["ingested_at"])
        self.expired_lifetimes = list(state["expired_lifetimes"])
        self.report = state["report"]
