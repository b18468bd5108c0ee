"""Long corpus replays measuring retention, stash, recall, and maintenance.

The replay drives one controller over a generated corpus in time order.
Alongside it run two independent measurement structures:

  * a brute-force oracle holding every live full vector, answering exact
    nearest-neighbor queries over the admissible set (the recall
    reference, maintained shadow-side and never consulted by the system);
  * an eager-repair index baseline fed the same insert/delete stream,
    which reassigns immediately with true vectors on every split/merge.

All measurement is read-only over traces and enclave-internal debug
state; replaying the same corpus and seed reproduces identical metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..ann import EagerIvfIndex
from ..controller import SUMMARY_ID_BASE, ChunkIngest, Controller, SystemConfig
from ..trace import EventKind
from ..workload.generator import WorkloadEvent


@dataclass
class ReplayMetrics:
    timeline: list = field(default_factory=list)  # dicts sampled over the run
    recall_sleepy: list = field(default_factory=list)
    recall_eager: list = field(default_factory=list)
    gt_hits: int = 0
    gt_total: int = 0
    summary_topk: int = 0
    topk_slots: int = 0
    query_bytes: list = field(default_factory=list)
    ingest_bytes: list = field(default_factory=list)
    expired_lifetimes: list = field(default_factory=list)
    stash_max: int = 0
    pending_resolved: int = 0
    pending_changed: int = 0
    final_stats: dict = field(default_factory=dict)

    @property
    def gt_rate(self) -> float:
        return self.gt_hits / self.gt_total if self.gt_total else 0.0

    @property
    def mean_recall_sleepy(self) -> float:
        return float(np.mean(self.recall_sleepy)) if self.recall_sleepy else 0.0

    @property
    def mean_recall_eager(self) -> float:
        return float(np.mean(self.recall_eager)) if self.recall_eager else 0.0

    @property
    def summary_topk_share(self) -> float:
        return self.summary_topk / self.topk_slots if self.topk_slots else 0.0

    @property
    def change_fraction(self) -> float:
        return (
            self.pending_resolved
            and self.pending_changed / self.pending_resolved
            or 0.0
        )


def _oracle_topk(
    shadow: dict[int, np.ndarray], admissible: set, query: np.ndarray, k: int
) -> list[int]:
    ids = sorted(i for i in admissible if i in shadow)
    if not ids:
        return []
    mat = np.stack([shadow[i] for i in ids])
    d2 = ((mat - query) ** 2).sum(axis=1)
    order = np.lexsort((np.array(ids), d2))
    return [ids[r] for r in order[:k]]


def replay(
    events: list[WorkloadEvent],
    meta: dict,
    config: SystemConfig,
    sample_every: int = 200,
    with_eager: bool = True,
    recall_queries: int = 0,  # 0: use corpus questions only
) -> ReplayMetrics:
    roster = meta.get("roster", {})
    projects = tuple(meta.get("projects", ()))
    ctrl = Controller(config, person_roster=roster, projects=projects)
    metrics = ReplayMetrics()

    eager = None
    if with_eager:
        eager = EagerIvfIndex(
            config.ivf(), np.random.default_rng(config.seed), ttl=ctrl.index.ttl
        )
    shadow: dict[int, np.ndarray] = {}

    ctr = 0
    op_count = 0

    def sync_side_structures() -> None:
        for item_id, vec_bytes in ctrl.policy.insert_log:
            vec = np.frombuffer(vec_bytes, dtype=np.float32)
            shadow[item_id] = vec
            if eager is not None:
                eager.insert(vec, item_id, now=ctrl.clock.t)
        ctrl.policy.insert_log.clear()
        for item_id in ctrl.policy.deleted_ids:
            shadow.pop(item_id, None)
            if eager is not None:
                eager.remove(item_id)
        ctrl.policy.deleted_ids.clear()

    def sample_row(epoch: float) -> None:
        metrics.timeline.append(
            {
                "t": epoch,
                "clock": ctrl.clock.t,
                "live": ctrl.live_count,
                "active": ctrl.policy.active_entries(),
                "stash_ann": ctrl.oram_ann.max_stash,
                "stash_data": ctrl.oram_data.max_stash,
                "pending": len(ctrl.index.pending),
                "clusters": len(ctrl.index.centroids),
            }
        )

    for ev in events:
        if ev.modality == "query":
            ctr += 1
            seq0 = ctrl.trace.next_seq
            ctrl.query(ev.text or "search", ctr)
            q_events = ctrl.trace.events_since(seq0)
            metrics.query_bytes.append(
                sum(e.byte_count for e in q_events if e.kind is EventKind.ORAM)
            )
            sync_side_structures()

            if ev.qa:
                top = ctrl.last_query["top"]
                gt = set(ev.qa["gt_chunk_ids"])
                metrics.gt_total += 1
                if gt & set(top):
                    metrics.gt_hits += 1
                metrics.topk_slots += len(top)
                metrics.summary_topk += sum(1 for i in top if i >= SUMMARY_ID_BASE)

                admissible = ctrl.last_query["admissible"]
                vec = ctrl.last_query["vec"]
                oracle = _oracle_topk(shadow, admissible, vec, config.k)
                if oracle:
                    denom = len(oracle)
                    metrics.recall_sleepy.append(
                        len(set(top) & set(oracle)) / denom
                    )
                    if eager is not None:
                        cands = eager.score(vec, admissible, config.n)
                        fetched = [
                            (c.item_id, eager.vectors[c.item_id])
                            for c in cands
                            if c.item_id is not None and c.item_id in eager.vectors
                        ]
                        etop = eager.rerank(fetched, vec, config.k)
                        metrics.recall_eager.append(
                            len(set(etop) & set(oracle)) / denom
                        )
        elif ev.chunks:
            for meta_chunk, (cid, text) in zip(ev.chunk_metas(), ev.chunks):
                ctr += 1
                seq0 = ctrl.trace.next_seq
                ctrl.ingest(ChunkIngest(text, meta_chunk), ctr)
                i_events = ctrl.trace.events_since(seq0)
                metrics.ingest_bytes.append(
                    sum(e.byte_count for e in i_events if e.kind is EventKind.ORAM)
                )
                sync_side_structures()
        ctrl.trace.drain()

        op_count += 1
        if op_count % sample_every == 0:
            sample_row(ev.t)

    sample_row(events[-1].t if events else 0.0)
    metrics.expired_lifetimes = list(ctrl.policy.expired_lifetimes)
    metrics.stash_max = max(ctrl.oram_ann.max_stash, ctrl.oram_data.max_stash)
    metrics.pending_resolved = ctrl.index.resolved_total
    metrics.pending_changed = ctrl.index.changed_total
    metrics.final_stats = ctrl.stats()
    return metrics
