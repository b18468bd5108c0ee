"""Per-user controller: orchestrates queries and ingestion end to end.

A query runs filter extraction, graph traversal, query embedding, index
scoring, a fixed-size candidate fetch from the vector store, exact
reranking, a fixed-size chunk fetch from the data store, and answer
synthesis.  An ingestion updates the graph, embeds the chunk, inserts
index metadata, and writes one block into each store; every T-th
ingestion additionally summarizes recent chunks and re-ingests the
summary through the same path (once, never recursively).

For a fixed parameter set, the observable event sequence of a request is
a pure function of its type:

    Query:   Call Call Oram(ANN, n) Oram(Data, K) Call
    Ingest:  Call Oram(ANN, 1) Oram(Data, 1)
             [+ Call + one recursive Ingest trace at summarization
              boundaries]

After every request the controller refreshes a rollback record binding
the request counter to both store roots; sealing pads the entire client
state to a fixed size, and recovery verifies record tag, checkpoint tag,
counter binding, and both roots before accepting any state.
"""

from __future__ import annotations

import math
import pickle
import random
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .ann import IvfConfig, IvfPqIndex
from .crypto import (
    Checkpoint,
    ClientSecret,
    CounterGate,
    CounterMismatch,
    DerivedKeys,
    StaleState,
    RollbackRecord,
    BucketHashTree,
    derive_keys,
    make_rollback_record,
    open_checkpoint,
    seal_checkpoint,
    sha256,
    verify_rollback_record,
)
from .dreaming import DreamPolicy, LogicalClock, RetentionConfig
from .enclaves import (
    EchoSynthesizer,
    HashEmbedder,
    PadPolicy,
    RuleBasedExtractor,
    TemplateSummarizer,
)
from .kg import ChunkMeta, FilterSet, KnowledgeGraph
from .oram import BLOCK_HEADER_LEN, OramClient, OramConfig
from .storage import MemoryBucketStore
from .trace import StoreId, TraceLog

SUMMARY_ID_BASE = 1 << 40  # summary chunks get ids above any corpus id


class ControllerError(Exception):
    pass


@dataclass(frozen=True)
class SystemConfig:
    """Public parameters plus artifact knobs; key = value text format."""

    # public parameters
    n: int = 200  # candidate fetch count
    k: int = 10  # rerank budget
    t_period: int = 5  # summarization period, in ingests
    depth_ann: int = 10  # tree depth L for the vector store
    depth_data: int = 10
    bucket_real_slots: int = 4  # Z
    bucket_dummy_slots: int = 5  # S
    evict_period: int = 3  # A
    # payloads
    embed_dim: int = 64
    chunk_payload: int = 512
    # inter-enclave pads
    pad_traverse: int = 4096
    pad_embed: int = 4096
    pad_synthesize: int = 16384
    pad_summarize: int = 16384
    checkpoint_pad: int = 1 << 23  # 8 MiB desk default (production: 64 MiB)
    # retention
    n_target: int = 4096
    write_ratio: float = 0.95
    chunks_per_item: float = 1.0
    # index
    warmup_size: int = 256
    pq_m: int = 8
    pq_bits: int = 8
    # behavior toggles
    kg_filtering: bool = True
    dreaming: bool = True
    seed: int = 7

    @property
    def ann_block_size(self) -> int:
        return BLOCK_HEADER_LEN + self.embed_dim * 4

    @property
    def data_block_size(self) -> int:
        return BLOCK_HEADER_LEN + self.chunk_payload

    def oram_ann_config(self) -> OramConfig:
        return OramConfig(
            self.depth_ann,
            self.bucket_real_slots,
            self.bucket_dummy_slots,
            self.evict_period,
            self.ann_block_size,
        )

    def oram_data_config(self) -> OramConfig:
        return OramConfig(
            self.depth_data,
            self.bucket_real_slots,
            self.bucket_dummy_slots,
            self.evict_period,
            self.data_block_size,
        )

    def retention(self) -> RetentionConfig:
        return RetentionConfig(
            self.n_target, self.write_ratio, self.chunks_per_item, self.k
        )

    def ivf(self) -> IvfConfig:
        return IvfConfig(
            dim=self.embed_dim,
            m=self.pq_m,
            bits=self.pq_bits,
            warmup_size=self.warmup_size,
            n_target=self.n_target,
        )

    # -- key=value config file ------------------------------------------
    def to_text(self) -> str:
        lines = ["# oblivmem configuration (key = value)"]
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "SystemConfig":
        kinds = {f.name: f.type for f in fields(SystemConfig)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ControllerError(f"config line {lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in kinds:
                raise ControllerError(f"config line {lineno}: unknown key {key!r}")
            kind = kinds[key]
            if kind in ("int", int):
                kwargs[key] = int(value)
            elif kind in ("float", float):
                kwargs[key] = float(value)
            elif kind in ("bool", bool):
                kwargs[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                kwargs[key] = value
        return SystemConfig(**kwargs)

    @staticmethod
    def from_file(path: str) -> "SystemConfig":
        with open(path) as fh:
            return SystemConfig.from_text(fh.read())


@dataclass(frozen=True)
class ChunkIngest:
    """One pre-chunked, fixed-size item plus its extraction metadata."""

    text: str
    meta: ChunkMeta

    @property
    def chunk_id(self) -> int:
        return self.meta.chunk_id


class Controller:
    def __init__(
        self,
        config: SystemConfig,
        secret: Optional[ClientSecret] = None,
        trace: Optional[TraceLog] = None,
        stores: Optional[tuple] = None,
        person_roster: Optional[dict[str, str]] = None,
        projects: tuple = (),
    ):
        self.config = config
        self.secret = secret or ClientSecret.generate()
        self.keys: DerivedKeys = derive_keys(self.secret)
        self.trace = trace if trace is not None else TraceLog()
        self.pads = PadPolicy(
            config.pad_traverse, config.pad_embed, config.pad_synthesize, config.pad_summarize
        )

        ann_cfg = config.oram_ann_config()
        data_cfg = config.oram_data_config()
        if stores is None:
            stores = (
                MemoryBucketStore(StoreId.ANN, ann_cfg.geometry()),
                MemoryBucketStore(StoreId.DATA, data_cfg.geometry()),
            )
        self.store_ann, self.store_data = stores

        seed = config.seed
        self.oram_ann = OramClient(
            ann_cfg, self.store_ann, self.keys, self.trace, StoreId.ANN, random.Random(seed * 2 + 1)
        )
        self.oram_data = OramClient(
            data_cfg, self.store_data, self.keys, self.trace, StoreId.DATA, random.Random(seed * 2 + 2)
        )

        retention = config.retention()
        self.index = IvfPqIndex(
            config.ivf(), np.random.default_rng(seed), ttl=retention.ttl
        )
        self.kg = KnowledgeGraph()
        self.clock = LogicalClock()
        self.policy = DreamPolicy(self.index, self.kg, self.clock, retention)
        self.policy.enabled = config.dreaming
        self.policy.oram_ann = self.oram_ann
        self.policy.oram_data = self.oram_data

        self.embedder = HashEmbedder(config.embed_dim, seed=config.seed)
        self.extractor = RuleBasedExtractor(person_roster or {}, projects)
        self.synthesizer = EchoSynthesizer()
        self.summarizer = TemplateSummarizer(max_chars=max(64, config.chunk_payload - 32))

        self.gate = CounterGate()
        self.ingest_count = 0
        self.next_summary_id = SUMMARY_ID_BASE
        self.last_event_ts: Optional[float] = None
        self._recent_texts: dict[int, str] = {}  # enclave-resident tail buffer

        # Untrusted-host side: current rollback record (MAC-protected).
        self.persisted_record: Optional[bytes] = None
        self._refresh_rollback_record(ctr=0)

    # ------------------------------------------------------------------
    def _call(self, call_class: str, payload_bytes: int) -> None:
        pad = self.pads.check(call_class, payload_bytes)
        self.trace.record_call(pad)

    def _refresh_rollback_record(self, ctr: int) -> None:
        rec = make_rollback_record(
            self.keys, ctr, self.oram_ann.roots(), self.oram_data.roots()
        )
        self.persisted_record = rec.to_bytes()

    def _vec_payload(self, vec: np.ndarray) -> bytes:
        return np.asarray(vec, dtype=np.float32).tobytes()

    def _text_payload(self, text: str) -> bytes:
        raw = text.encode("utf-8")[: self.config.chunk_payload]
        return raw

    # ------------------------------------------------------------------
    def query(self, text: str, ctr: int) -> str:
        self.gate.accept(ctr)
        self.clock.tick()
        cfg = self.config

        now = self.last_event_ts if self.last_event_ts is not None else 0.0
        filters = self.extractor.extract(text, now)
        self._call("traverse", len(text.encode()) + len(str(filters.to_dict()).encode()))

        if cfg.kg_filtering:
            admissible = self.kg.traverse(filters, min_candidates=cfg.n).chunk_ids
        else:
            admissible = self.kg.live_chunk_ids()

        vec = self.embedder.embed(text)
        self._call("embed", len(text.encode()) + vec.nbytes)

        candidates = self.index.score(vec, admissible, cfg.n)
        fetch_ids = [c.item_id for c in candidates]
        fetched_raw = self.oram_ann.batch_access(fetch_ids, op="read", dream=self.policy)

        fetched = []
        for item_id, payload in zip(fetch_ids, fetched_raw):
            if item_id is not None and payload is not None:
                fetched.append((item_id, np.frombuffer(payload, dtype=np.float32)))
        top = self.index.rerank(fetched, vec, cfg.k)
        top_padded: list[Optional[int]] = list(top) + [None] * (cfg.k - len(top))

        data_raw = self.oram_data.batch_access(top_padded, op="read", dream=self.policy)
        chunks = []
        for item_id, payload in zip(top_padded, data_raw):
            if item_id is not None and payload is not None:
                chunks.append((item_id, payload.decode("utf-8", errors="ignore")))

        answer = self.synthesizer.synthesize(chunks)
        self._call("synthesize", sum(len(t.encode()) for _, t in chunks) + len(answer.encode()))

        # Enclave-internal debug surface for the measurement harness.
        self.last_query = {
            "admissible": admissible,
            "candidates": [c.item_id for c in candidates if c.item_id is not None],
            "top": list(top),
            "vec": vec,
        }
        self._refresh_rollback_record(ctr)
        return answer

    # ------------------------------------------------------------------
    def ingest(self, chunk: ChunkIngest, ctr: int) -> None:
        self.gate.accept(ctr)
        self._ingest_inner(chunk, depth=0)
        self._refresh_rollback_record(ctr)

    def _ingest_inner(self, chunk: ChunkIngest, depth: int) -> None:
        cfg = self.config
        self.clock.tick()
        if chunk.meta.timestamp is not None:
            self.last_event_ts = chunk.meta.timestamp

        self.kg.update(chunk.meta)

        vec = self.embedder.embed(chunk.text)
        self._call("embed", len(chunk.text.encode()) + vec.nbytes)

        self.index.insert(vec, chunk.chunk_id, now=self.clock.t)
        self.policy.register_insert(chunk.chunk_id, self._vec_payload(vec))

        self.oram_ann.batch_access(
            [chunk.chunk_id], op="insert", blocks=[self._vec_payload(vec)], dream=self.policy
        )
        self.oram_data.batch_access(
            [chunk.chunk_id], op="insert", blocks=[self._text_payload(chunk.text)], dream=self.policy
        )

        if not chunk.meta.is_summary:
            self._recent_texts[chunk.chunk_id] = chunk.text
            cap = min(4 * cfg.t_period, 256)
            while len(self._recent_texts) > cap:
                del self._recent_texts[next(iter(self._recent_texts))]

        self.ingest_count += 1
        if self.ingest_count % cfg.t_period == 0 and depth == 0:
            self._summarize_and_reingest(chunk)

    def _summarize_and_reingest(self, trigger: ChunkIngest) -> None:
        recent_ids = self.kg.recent(self.config.t_period)
        resident = [
            (cid, self._recent_texts[cid]) for cid in recent_ids if cid in self._recent_texts
        ]
        summary_text = self.summarizer.summarize(resident)
        self._call(
            "summarize",
            sum(len(t.encode()) for _, t in resident) + len(summary_text.encode()),
        )

        chunk_id = self.next_summary_id
        self.next_summary_id += 1
        summarized = tuple(
            sorted(
                {
                    self.kg.chunk_artifact[cid]
                    for cid, _ in resident
                    if cid in self.kg.chunk_artifact
                }
            )
        )
        meta = ChunkMeta(
            chunk_id=chunk_id,
            artifact_id=chunk_id,
            modality=None,
            timestamp=trigger.meta.timestamp,
            participants=(),
            project=None,
            source_links=(),
            is_summary=True,
            summarized_artifacts=summarized,
        )
        self._ingest_inner(ChunkIngest(summary_text, meta), depth=1)

    # ------------------------------------------------------------------
    def seal_and_evict(self) -> tuple[bytes, bytes]:
        """Seal the full client state; returns (checkpoint, record) bytes.

        Both bind the last accepted counter, preventing independent
        rollback of either object.
        """
        state = {
            "kg": self.kg,
            "index": self.index.get_state(),
            "oram_ann": self.oram_ann.get_state(),
            "oram_data": self.oram_data.get_state(),
            "clock": self.clock.t,
            "ingest_count": self.ingest_count,
            "policy": self.policy.get_state(),
            "last_ctr": self.gate.last_accepted,
            "recent_texts": dict(self._recent_texts),
            "next_summary_id": self.next_summary_id,
            "last_event_ts": self.last_event_ts,
        }
        blob = pickle.dumps(state, protocol=5)
        ctr = self.gate.last_accepted
        cp = seal_checkpoint(self.keys, ctr, blob, self.config.checkpoint_pad)
        rec = make_rollback_record(
            self.keys, ctr, self.oram_ann.roots(), self.oram_data.roots()
        )
        self.persisted_record = rec.to_bytes()
        return cp.to_bytes(), rec.to_bytes()

    @classmethod
    def restore(
        cls,
        config: SystemConfig,
        secret: ClientSecret,
        checkpoint_bytes: bytes,
        record_bytes: bytes,
        stores: tuple,
        expected_ctr: int,
        trace: Optional[TraceLog] = None,
        person_roster: Optional[dict[str, str]] = None,
        projects: tuple = (),
    ) -> "Controller":
        """Verify and rebuild a controller from sealed state.

        Aborts with AuthFailure / BadTag / CounterMismatch / StaleState
        on any checkpoint, record, counter, or root mismatch.
        """
        keys = derive_keys(secret)
        cp = Checkpoint.from_bytes(checkpoint_bytes)
        cp_ctr, blob = open_checkpoint(keys, cp)  # AuthFailure on tamper

        rec = RollbackRecord.from_bytes(record_bytes)
        store_ann, store_data = stores
        root_ann = cls._root_from_store(store_ann)
        root_data = cls._root_from_store(store_data)
        verify_rollback_record(keys, rec, expected_ctr, root_ann, root_data)
        if cp_ctr != rec.ctr:
            raise CounterMismatch(
                f"checkpoint counter {cp_ctr} != rollback record counter {rec.ctr}"
            )

        state = pickle.loads(blob)  # authenticated above

        ctrl = cls.__new__(cls)
        ctrl.config = config
        ctrl.secret = secret
        ctrl.keys = keys
        ctrl.trace = trace if trace is not None else TraceLog()
        ctrl.pads = PadPolicy(
            config.pad_traverse, config.pad_embed, config.pad_synthesize, config.pad_summarize
        )
        ctrl.store_ann, ctrl.store_data = stores
        ctrl.oram_ann = OramClient.restore(
            config.oram_ann_config(), store_ann, keys, ctrl.trace, StoreId.ANN, state["oram_ann"]
        )
        ctrl.oram_data = OramClient.restore(
            config.oram_data_config(), store_data, keys, ctrl.trace, StoreId.DATA, state["oram_data"]
        )
        if ctrl.oram_ann.roots() != rec.root_ann or ctrl.oram_data.roots() != rec.root_data:
            raise StaleState("sealed client state does not match the rollback record")

        retention = config.retention()
        ctrl.index = IvfPqIndex(config.ivf(), np.random.default_rng(config.seed), ttl=retention.ttl)
        ctrl.index.set_state(state["index"])
        ctrl.kg = state["kg"]
        ctrl.clock = LogicalClock(state["clock"])
        ctrl.policy = DreamPolicy(ctrl.index, ctrl.kg, ctrl.clock, retention)
        ctrl.policy.set_state(state["policy"])
        ctrl.policy.oram_ann = ctrl.oram_ann
        ctrl.policy.oram_data = ctrl.oram_data

        ctrl.embedder = HashEmbedder(config.embed_dim, seed=config.seed)
        ctrl.extractor = RuleBasedExtractor(person_roster or {}, projects)
        ctrl.synthesizer = EchoSynthesizer()
        ctrl.summarizer = TemplateSummarizer(max_chars=max(64, config.chunk_payload - 32))

        ctrl.gate = CounterGate(state["last_ctr"])
        ctrl.ingest_count = state["ingest_count"]
        ctrl.next_summary_id = state["next_summary_id"]
        ctrl.last_event_ts = state["last_event_ts"]
        ctrl._recent_texts = dict(state["recent_texts"])
        ctrl.persisted_record = record_bytes
        return ctrl

    @staticmethod
    def _root_from_store(store) -> bytes:
        hashes = [sha256(b) for b in store.read_buckets(range(store.geometry.num_buckets))]
        return BucketHashTree.root_of(hashes)

    # ------------------------------------------------------------------
    @property
    def live_count(self) -> int:
        return self.index.live_count

    def stats(self) -> dict:
        return {
            "clock": self.clock.t,
            "ingests": self.ingest_count,
            "live": self.live_count,
            "active": self.policy.active_entries(),
            "stash_max_ann": self.oram_ann.max_stash,
            "stash_max_data": self.oram_data.max_stash,
            "dream": vars(self.policy.report).copy(),
            "index": self.index.debug_dump(),
            "kg": self.kg.stats(),
        }
