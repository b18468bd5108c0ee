"""Integrity and freshness fuzzing.

Random single-bit mutations are applied to stored buckets, rollback
records, and sealed checkpoints; every mutation must be detected by the
verification machinery (root recomputation against the rollback record,
record MAC verification, checkpoint AEAD).  Stale-snapshot restores and
replayed request counters must always be rejected.
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field

from ..controller import ChunkIngest, Controller, SystemConfig
from ..crypto import (
    AuthFailure,
    BadTag,
    Checkpoint,
    CounterMismatch,
    CryptoError,
    ReplayDetected,
    RollbackRecord,
    StaleState,
    open_checkpoint,
    verify_rollback_record,
)
from ..kg import ChunkMeta

FUZZ_CONFIG = SystemConfig(
    n=8,
    k=4,
    depth_ann=6,
    depth_data=6,
    n_target=128,
    warmup_size=64,
    checkpoint_pad=1 << 16,
    t_period=4,
)


@dataclass
class FuzzReport:
    bucket_trials: int = 0
    bucket_detected: int = 0
    record_trials: int = 0
    record_detected: int = 0
    checkpoint_trials: int = 0
    checkpoint_detected: int = 0
    stale_restores: int = 0
    stale_rejected: int = 0
    replays: int = 0
    replays_rejected: int = 0

    @property
    def total_trials(self) -> int:
        return self.bucket_trials + self.record_trials + self.checkpoint_trials

    @property
    def total_detected(self) -> int:
        return self.bucket_detected + self.record_detected + self.checkpoint_detected

    @property
    def detection_rate(self) -> float:
        return self.total_detected / self.total_trials if self.total_trials else 0.0

    @property
    def all_rejected(self) -> bool:
        return (
            self.stale_rejected == self.stale_restores
            and self.replays_rejected == self.replays
        )


def _build_system(seed: int) -> tuple[Controller, int]:
    ctrl = Controller(FUZZ_CONFIG, person_roster={"alice-chen": "Alice Chen"})
    ctr = 0
    for i in range(24):
        ctr += 1
        meta = ChunkMeta(chunk_id=i, artifact_id=i, modality="email",
                         timestamp=1_767_225_600.0 + i, participants=("Alice Chen",))
        ctrl.ingest(ChunkIngest(f"note ref{i:04d} kelp ember", meta), ctr)
    return ctrl, ctr


def fuzz_integrity(trials: int = 10_000, seed: int = 7) -> FuzzReport:
    rng = random.Random(seed)
    report = FuzzReport()
    ctrl, ctr = _build_system(seed)
    keys = ctrl.keys
    cp_bytes, rec_bytes = ctrl.seal_and_evict()
    record = RollbackRecord.from_bytes(rec_bytes)
    stores = (ctrl.store_ann, ctrl.store_data)

    # Split the trial budget across the three object classes.
    n_bucket = trials // 3
    n_record = trials // 3
    n_checkpoint = trials - n_bucket - n_record

    # --- bucket mutations: detected by root-vs-record verification ----
    for _ in range(n_bucket):
        store = stores[rng.randrange(2)]
        g = store.geometry
        bucket = rng.randrange(g.num_buckets)
        offset = rng.randrange(g.bucket_len)
        bit = rng.randrange(8)
        store.corrupt(bucket, offset, bit)
        report.bucket_trials += 1
        roots = (
            Controller._root_from_store(stores[0]),
            Controller._root_from_store(stores[1]),
        )
        try:
            verify_rollback_record(keys, record, record.ctr, roots[0], roots[1])
        except CryptoError:
            report.bucket_detected += 1
        store.corrupt(bucket, offset, bit)  # undo for the next trial

    # --- rollback record mutations ------------------------------------
    root_ann = Controller._root_from_store(stores[0])
    root_data = Controller._root_from_store(stores[1])
    for _ in range(n_record):
        raw = bytearray(rec_bytes)
        pos = rng.randrange(len(raw))
        raw[pos] ^= 1 << rng.randrange(8)
        report.record_trials += 1
        try:
            mutated = RollbackRecord.from_bytes(bytes(raw))
            verify_rollback_record(keys, mutated, record.ctr, root_ann, root_data)
        except CryptoError:
            report.record_detected += 1

    # --- checkpoint mutations -----------------------------------------
    for _ in range(n_checkpoint):
        raw = bytearray(cp_bytes)
        pos = rng.randrange(len(raw))
        raw[pos] ^= 1 << rng.randrange(8)
        report.checkpoint_trials += 1
        try:
            cp = Checkpoint.from_bytes(bytes(raw))
            open_checkpoint(keys, cp)
        except CryptoError:
            report.checkpoint_detected += 1

    # --- stale snapshot restores ---------------------------------------
    for trial in range(50):
        ctrl2, ctr2 = _build_system(seed + 100 + trial)
        old_cp, old_rec = ctrl2.seal_and_evict()
        old_stores = (
            copy.deepcopy(ctrl2.store_ann),
            copy.deepcopy(ctrl2.store_data),
        )
        # The system moves on.
        ctr2 += 1
        ctrl2.query("what about kelp?", ctr2)
        ctr2 += 1
        meta = ChunkMeta(chunk_id=900 + trial, artifact_id=900 + trial,
                         modality="email", timestamp=1_767_225_700.0)
        ctrl2.ingest(ChunkIngest("late note", meta), ctr2)
        new_cp, new_rec = ctrl2.seal_and_evict()

        report.stale_restores += 2
        # Whole-state rollback: old snapshot + old record + old checkpoint.
        try:
            Controller.restore(FUZZ_CONFIG, ctrl2.secret, old_cp, old_rec,
                               old_stores, expected_ctr=ctr2)
        except (CounterMismatch, StaleState, BadTag, AuthFailure):
            report.stale_rejected += 1
        # Stale trees, current record.
        try:
            Controller.restore(FUZZ_CONFIG, ctrl2.secret, new_cp, new_rec,
                               old_stores, expected_ctr=ctr2)
        except (CounterMismatch, StaleState, BadTag, AuthFailure):
            report.stale_rejected += 1

    # --- replayed counters ----------------------------------------------
    for trial in range(100):
        report.replays += 1
        stale_ctr = rng.randrange(0, ctr + 1)  # <= last accepted
        try:
            ctrl.query("replay probe", stale_ctr)
        except ReplayDetected:
            report.replays_rejected += 1

    return report
