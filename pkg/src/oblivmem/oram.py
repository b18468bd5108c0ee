"""Tree ORAM client with single-slot path reads and scheduled evictions.

Access shape, fixed by construction:

  * every logical access touches exactly one slot in each of the L+1
    buckets on one root-to-leaf path (the requested block's slot in its
    bucket, a random never-before-read non-live slot elsewhere);
  * every A accesses, the next path in reverse-lexicographic leaf order
    is read in full, drained into the stash, and rewritten;
  * a bucket whose unread non-live slots are exhausted is rewritten in
    place (reshuffle) before serving another touch.

Which buckets are touched depends only on position-map randomness and
the access counter, never on block identity; slot placement is shuffled
on every rewrite, so the touched slot index carries no information.

Slot occupancy, read marks, epochs, and bucket hashes live in client
memory and travel inside the sealed checkpoint.  Read-phase bytes are
reported on the batch's TraceEvent; eviction and reshuffle traffic is
tracked separately as maintenance I/O (the deferrable write-back work).

Block plaintext framing inside a slot (block_size bytes total):

    flag u8 (1 real / 0 dummy) | id u64 | payload_len u32 | payload | zeros
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .crypto import BucketHashTree, DerivedKeys, sha256
from .storage import BUCKET_EPOCH_LEN, BucketStore, TreeGeometry
from .trace import StoreId, TraceLog

BLOCK_HEADER_LEN = 13

_NONCE = struct.Struct(">BIBIH")  # tree u8 | bucket u32 | slot u8 | epoch u48


def pack_block_nonce(tree_code: int, bucket: int, slot: int, epoch: int) -> bytes:
    """96-bit nonce from the block's physical position and write epoch."""
    return _NONCE.pack(tree_code, bucket, slot, epoch & 0xFFFFFFFF, epoch >> 32)


_BITS_CACHE: dict[int, list[tuple]] = {}


def _bit_table(nslots: int) -> list[tuple]:
    """mask -> tuple of set bit positions, for slot-candidate selection."""
    table = _BITS_CACHE.get(nslots)
    if table is None:
        table = [
            tuple(s for s in range(nslots) if m >> s & 1) for m in range(1 << nslots)
        ]
        _BITS_CACHE[nslots] = table
    return table

DUMMY = -1  # slot holds an untracked filler
DEAD = -2  # slot held a real block that was consumed or deleted

_TREE_CODE = {StoreId.ANN: 0, StoreId.DATA: 1}


class OramError(Exception):
    pass


class ConfigInvalid(OramError):
    pass


class IntegrityFailure(OramError):
    pass


class StashOverflow(OramError):
    pass


@dataclass(frozen=True)
class OramConfig:
    depth: int  # L; 2^L leaves
    real_slots: int = 4  # Z
    dummy_slots: int = 5  # S
    evict_period: int = 3  # A
    block_size: int = 272
    stash_limit: int = 4096

    def __post_init__(self):
        if self.depth < 1 or self.real_slots < 1 or self.dummy_slots < 1:
            raise ConfigInvalid("depth, Z and S must be positive")
        if self.evict_period < 1:
            raise ConfigInvalid("eviction period must be positive")
        if self.block_size <= BLOCK_HEADER_LEN:
            raise ConfigInvalid("block_size must exceed the framing header")

    @property
    def num_leaves(self) -> int:
        return 1 << self.depth

    @property
    def num_buckets(self) -> int:
        return (1 << (self.depth + 1)) - 1

    @property
    def path_len(self) -> int:
        return self.depth + 1

    @property
    def capacity(self) -> int:
        """Usable entries under the Z blocks-per-leaf convention."""
        return self.real_slots * self.num_leaves

    @property
    def payload_capacity(self) -> int:
        return self.block_size - BLOCK_HEADER_LEN

    def geometry(self) -> TreeGeometry:
        return TreeGeometry(self.depth, self.real_slots, self.dummy_slots, self.block_size)


def encode_block(block_id: int, payload: bytes, block_size: int) -> bytes:
    if len(payload) > block_size - BLOCK_HEADER_LEN:
        raise OramError(
            f"payload of {len(payload)} bytes exceeds capacity {block_size - BLOCK_HEADER_LEN}"
        )
    head = struct.pack(">BQI", 1, block_id, len(payload))
    return head + payload + b"\0" * (block_size - BLOCK_HEADER_LEN - len(payload))


def decode_block(plaintext: bytes) -> tuple[int, bytes]:
    flag, block_id, length = struct.unpack(">BQI", plaintext[:BLOCK_HEADER_LEN])
    if flag != 1:
        raise OramError("not a real block")
    return block_id, plaintext[BLOCK_HEADER_LEN : BLOCK_HEADER_LEN + length]


def bit_reverse(x: int, width: int) -> int:
    r = 0
    for _ in range(width):
        r = (r << 1) | (x & 1)
        x >>= 1
    return r


@dataclass
class DreamContext:
    """Everything materialized in enclave memory during one batched access."""

    store: StoreId
    op: str  # "read" | "insert"
    requested_ids: tuple
    residents: dict  # block id -> payload bytes (requested + incidental)
    requested_present: frozenset = frozenset()


DreamCallback = Callable[[DreamContext], None]


class OramClient:
    """Single-threaded per-tree client; distinct trees run independently."""

    def __init__(
        self,
        config: OramConfig,
        store: BucketStore,
        keys: DerivedKeys,
        trace: TraceLog,
        store_id: StoreId,
        rng: random.Random,
    ):
        if store.geometry != config.geometry():
            raise ConfigInvalid("store geometry does not match ORAM configuration")
        self.config = config
        self.store = store
        self.keys = keys
        self.trace = trace
        self.store_id = store_id
        self.tree_code = _TREE_CODE[store_id]
        self.rng = rng

        g = config.geometry()
        self._slot_len = g.slot_len
        self._nslots = g.slots_per_bucket
        self._bucket_len = g.bucket_len

        n = config.num_buckets
        self.position_map: dict[int, int] = {}
        self.stash: dict[int, bytes] = {}  # id -> block plaintext payload
        self.occupants: list[list[int]] = [[DUMMY] * self._nslots for _ in range(n)]
        self.free_masks: list[int] = [(1 << self._nslots) - 1] * n
        self.read_masks: list[int] = [0] * n
        self.epochs: list[int] = [0] * n
        self.access_count = 0
        self.evict_count = 0

        # statistics
        self.max_stash = 0
        self.online_bytes = 0
        self.maintenance_bytes = 0
        self.reshuffles = 0
        self.reclaimed = 0

        self._aead = AESGCM(keys.k_enc)
        self._bits = _bit_table(self._nslots)
        self._full_mask = (1 << self._nslots) - 1
        self.filler_generation = 0
        self._make_filler()
        self._paths = self._build_paths()
        self._init_buckets()

    def _make_filler(self) -> None:
        """Keystream source for slot filler: AES-CTR under a derived key.

        Filler bytes are never decrypted; they only need to be
        indistinguishable from real ciphertext.  The generation counter
        keeps streams distinct across restores.
        """
        seed = sha256(
            b"oblivmem/filler/v1"
            + self.keys.k_enc
            + bytes([self.tree_code])
            + struct.pack(">Q", self.filler_generation)
        )
        enc = Cipher(algorithms.AES(seed[:16]), modes.CTR(seed[16:32][:16])).encryptor()
        self._filler_update = enc.update

    def _filler(self, n: int) -> bytes:
        return self._filler_update(bytes(n))

    # ------------------------------------------------------------------
    def _build_paths(self) -> list[tuple]:
        L = self.config.depth
        paths = []
        for leaf in range(self.config.num_leaves):
            node = (1 << L) - 1 + leaf
            path = [0] * (L + 1)
            for d in range(L, -1, -1):
                path[d] = node
                node = (node - 1) >> 1
            paths.append(tuple(path))
        return paths

    def _init_buckets(self) -> None:
        """Fill every bucket with filler slots and build the hash tree."""
        hashes = []
        writes = []
        filler = self._filler
        slots_len = self._nslots * self._slot_len
        for i in range(self.config.num_buckets):
            data = struct.pack(">Q", 0) + filler(slots_len)
            writes.append((i, data))
            hashes.append(sha256(data))
        self.store.write_buckets(writes)
        self.maintenance_bytes += len(writes) * self._bucket_len
        self.hash_tree = BucketHashTree(self.config.num_buckets, hashes)

    # ------------------------------------------------------------------
    def roots(self) -> bytes:
        return self.hash_tree.root

    def recompute_root_from_store(self) -> bytes:
        """Integrity oracle: hash every stored bucket from scratch."""
        hashes = [sha256(b) for b in self.store.read_buckets(range(self.config.num_buckets))]
        return BucketHashTree.root_of(hashes)

    @property
    def live_count(self) -> int:
        return len(self.position_map)

    # ------------------------------------------------------------------
    def batch_access(
        self,
        ids: Sequence[Optional[int]],
        op: str = "read",
        blocks: Optional[Sequence[bytes]] = None,
        dream: Optional[DreamCallback] = None,
    ) -> list[Optional[bytes]]:
        """Execute a batch of single accesses under one logical trace event.

        ids may contain None entries (padding): those perform a dummy
        path read and return None.  For op="insert", blocks supplies the
        payload for each non-None id.
        """
        if op not in ("read", "insert"):
            raise OramError(f"unknown op {op!r}")
        if op == "insert" and (blocks is None or len(blocks) != len(ids)):
            raise OramError("insert requires one payload per id")

        residents: dict[int, bytes] = {}
        results: list[Optional[bytes]] = []
        online_before = self.online_bytes

        for pos, bid in enumerate(ids):
            if op == "insert" and bid is not None:
                self._access_one(None, residents)  # fixed shape: one path read
                payload = blocks[pos]
                self.stash[bid] = payload
                self.position_map[bid] = self.rng.randrange(self.config.num_leaves)
                residents[bid] = payload
                results.append(None)
            else:
                results.append(self._access_one(bid, residents))
            if len(self.stash) > self.max_stash:
                self.max_stash = len(self.stash)
            if len(self.stash) > self.config.stash_limit:
                raise StashOverflow(f"stash exceeded {self.config.stash_limit} blocks")
            self.access_count += 1
            if self.access_count % self.config.evict_period == 0:
                self.deterministic_evict(residents)

        requested_real = tuple(b for b in ids if b is not None)
        if dream is not None:
            ctx = DreamContext(
                store=self.store_id,
                op=op,
                requested_ids=requested_real,
                residents=residents,
                requested_present=frozenset(requested_real),
            )
            dream(ctx)

        self.trace.record_oram(self.store_id, len(ids), self.online_bytes - online_before)
        return results

    # ------------------------------------------------------------------
    def _access_one(self, block_id: Optional[int], residents: dict) -> Optional[bytes]:
        rnd = self.rng.random
        pos_map = self.position_map
        num_leaves = self.config.num_leaves
        real = block_id is not None and block_id in pos_map
        if real:
            leaf = pos_map[block_id]
        else:
            block_id = None
            leaf = int(rnd() * num_leaves)

        path = self._paths[leaf]
        occupants = self.occupants
        masks = self.read_masks
        frees = self.free_masks
        bits = self._bits
        refs: list[tuple[int, int]] = []
        target_ref = -1
        seek = real and block_id not in self.stash

        for node in path:
            slot = -1
            if seek:
                occ = occupants[node]
                if block_id in occ:
                    slot = occ.index(block_id)
                    target_ref = len(refs)
                    seek = False
            if slot < 0:
                cands = bits[frees[node] & ~masks[node]]
                if not cands:
                    self._reshuffle(node, residents)
                    cands = bits[frees[node]]
                n_c = len(cands)
                slot = cands[int(rnd() * n_c)] if n_c > 1 else cands[0]
            masks[node] |= 1 << slot
            refs.append((node, slot))

        slot_bytes = self.store.read_slots(refs, target_ref if target_ref >= 0 else None)
        self.online_bytes += len(refs) * self._slot_len

        payload: Optional[bytes] = None
        if real:
            if target_ref < 0:
                if block_id not in self.stash:
                    raise IntegrityFailure(
                        f"block {block_id} missing from its mapped path"
                    )
                payload = self.stash[block_id]
            else:
                node, slot = refs[target_ref]
                plain = self._open_slot(node, slot, slot_bytes[target_ref])
                got_id, payload = decode_block(plain)
                if got_id != block_id:
                    raise IntegrityFailure("slot holds an unexpected block id")
                occupants[node][slot] = DEAD
                frees[node] |= 1 << slot
                self.stash[block_id] = payload
            pos_map[block_id] = int(rnd() * num_leaves)
            residents[block_id] = payload
        return payload

    def _open_slot(self, node: int, slot: int, ct: bytes) -> bytes:
        nonce = pack_block_nonce(self.tree_code, node, slot, self.epochs[node])
        try:
            return self._aead.decrypt(nonce, ct, None)
        except InvalidTag as e:
            raise IntegrityFailure(f"bucket {node} slot {slot}: authentication failed") from e

    # ------------------------------------------------------------------
    def _collect_bucket(self, node: int, raw: bytes, residents: dict) -> None:
        """Verify a full bucket and move its live blocks into the stash.

        Buckets holding no live blocks skip the hash check: nothing in
        them is ever consumed, every consumed slot is independently
        authenticated by its position-and-epoch AEAD nonce, and recovery
        recomputes the full root from stored bytes anyway.
        """
        occ = self.occupants[node]
        if max(occ) < 0:
            return
        if sha256(raw) != self.hash_tree.bucket_hashes[node]:
            raise IntegrityFailure(f"bucket {node} hash mismatch")
        pos_map = self.position_map
        slot_len = self._slot_len
        for s in range(self._nslots):
            bid = occ[s]
            if bid < 0:
                continue
            if bid not in pos_map:
                self.reclaimed += 1  # deleted block physically dropped
                continue
            off = BUCKET_EPOCH_LEN + s * slot_len
            plain = self._open_slot(node, s, raw[off : off + slot_len])
            got_id, payload = decode_block(plain)
            if got_id != bid:
                raise IntegrityFailure("slot holds an unexpected block id")
            self.stash[bid] = payload
            residents[bid] = payload

    def _update_hashes_along_path(self, path, updates) -> None:
        """Merkle maintenance after rewriting one root-to-leaf path."""
        ht = self.hash_tree
        bh = ht.bucket_hashes
        nodes = ht.nodes
        n = ht.n
        for node, h in updates:
            bh[node] = h
        for node in reversed(path):
            left = 2 * node + 1
            right = left + 1
            nodes[node] = sha256(
                bh[node]
                + (nodes[left] if left < n else b"")
                + (nodes[right] if right < n else b"")
            )

    def _rewrite_bucket(self, node: int, place_ids: list[int]) -> tuple[int, bytes]:
        """Re-encrypt a bucket holding place_ids plus filler, positions shuffled."""
        nslots = self._nslots
        slot_len = self._slot_len
        epoch = self.epochs[node] + 1
        self.epochs[node] = epoch
        rng = self.rng
        self.read_masks[node] = 0

        if not place_ids:
            self.occupants[node] = [DUMMY] * nslots
            self.free_masks[node] = self._full_mask
            return node, struct.pack(">Q", epoch) + self._filler(nslots * slot_len)

        data = bytearray(struct.pack(">Q", epoch))
        data += self._filler(nslots * slot_len)
        occ = [DUMMY] * nslots
        free = self._full_mask
        encrypt = self._aead.encrypt
        tree_code = self.tree_code
        block_size = self.config.block_size
        stash_pop = self.stash.pop
        for bid, s in zip(place_ids, rng.sample(range(nslots), len(place_ids))):
            occ[s] = bid
            free &= ~(1 << s)
            nonce = pack_block_nonce(tree_code, node, s, epoch)
            ct = encrypt(nonce, encode_block(bid, stash_pop(bid), block_size), None)
            off = BUCKET_EPOCH_LEN + s * slot_len
            data[off : off + slot_len] = ct
        self.occupants[node] = occ
        self.free_masks[node] = free
        return node, bytes(data)

    def _reshuffle(self, node: int, residents: dict) -> None:
        """Rewrite one bucket in place after its readable slots ran out."""
        raw = self.store.read_buckets([node])[0]
        self.maintenance_bytes += self._bucket_len
        keep = [b for b in self.occupants[node] if b >= 0 and b in self.position_map]
        self._collect_bucket(node, raw, residents)
        node_, data = self._rewrite_bucket(node, keep)
        h = sha256(data)
        self.store.write_buckets([(node, data)])
        self.maintenance_bytes += self._bucket_len
        self.hash_tree.update(node, h)
        self.reshuffles += 1

    def deterministic_evict(self, residents: Optional[dict] = None) -> None:
        """Read, drain, and rewrite the next reverse-lexicographic path."""
        if residents is None:
            residents = {}
        cfg = self.config
        leaf = bit_reverse(self.evict_count % cfg.num_leaves, cfg.depth)
        self.evict_count += 1
        path = self._paths[leaf]

        raws = self.store.read_buckets(path)
        self.maintenance_bytes += len(path) * self._bucket_len
        for node, raw in zip(path, raws):
            self._collect_bucket(node, raw, residents)

        # Greedy placement, deepest bucket first.
        L = cfg.depth
        Z = cfg.real_slots
        pos_map = self.position_map
        remaining: list[tuple[int, int]] = []  # (common-prefix depth, id)
        for bid in self.stash:
            other = pos_map[bid]
            cp = L if other == leaf else (L - (other ^ leaf).bit_length())
            remaining.append((cp, bid))
        remaining.sort(reverse=True)

        idx = 0
        n_rem = len(remaining)
        writes = []
        updates = []
        rewrite = self._rewrite_bucket
        for depth in range(L, -1, -1):
            placed: list[int] = []
            while idx < n_rem and len(placed) < Z and remaining[idx][0] >= depth:
                placed.append(remaining[idx][1])
                idx += 1
            node, data = rewrite(path[depth], placed)
            writes.append((node, data))
            updates.append((node, sha256(data)))
        self.store.write_buckets(writes)
        self.maintenance_bytes += len(writes) * self._bucket_len
        self._update_hashes_along_path(path, updates)
        if len(self.stash) > self.max_stash:
            self.max_stash = len(self.stash)

    # ------------------------------------------------------------------
    def forget(self, block_id: int) -> bool:
        """Metadata-only deletion: no storage access is issued."""
        leaf = self.position_map.pop(block_id, None)
        if leaf is None:
            return False
        if self.stash.pop(block_id, None) is not None:
            return True
        for node in self._paths[leaf]:
            occ = self.occupants[node]
            try:
                s = occ.index(block_id)
            except ValueError:
                continue
            occ[s] = DEAD
            self.free_masks[node] |= 1 << s
            return True
        return True

    # ------------------------------------------------------------------
    def get_state(self) -> dict:
        return {
            "position_map": dict(self.position_map),
            "stash": dict(self.stash),
            "occupants": [list(o) for o in self.occupants],
            "free_masks": list(self.free_masks),
            "read_masks": list(self.read_masks),
            "epochs": list(self.epochs),
            "bucket_hashes": list(self.hash_tree.bucket_hashes),
            "access_count": self.access_count,
            "evict_count": self.evict_count,
            "rng_state": self.rng.getstate(),
            "max_stash": self.max_stash,
            "filler_generation": self.filler_generation + 1,
        }

    def set_state(self, state: dict) -> None:
        self.position_map = dict(state["position_map"])
        self.stash = dict(state["stash"])
        self.occupants = [list(o) for o in state["occupants"]]
        self.free_masks = list(state["free_masks"])
        self.read_masks = list(state["read_masks"])
        self.epochs = list(state["epochs"])
        self.hash_tree = BucketHashTree(self.config.num_buckets, list(state["bucket_hashes"]))
        self.access_count = state["access_count"]
        self.evict_count = state["evict_count"]
        self.rng.setstate(state["rng_state"])
        self.max_stash = state["max_stash"]
        self.filler_generation = state.get("filler_generation", 0)
        self._make_filler()

    @classmethod
    def restore(
        cls,
        config: OramConfig,
        store: BucketStore,
        keys: DerivedKeys,
        trace: TraceLog,
        store_id: StoreId,
        state: dict,
    ) -> "OramClient":
        client = cls.__new__(cls)
        client.config = config
        client.store = store
        client.keys = keys
        client.trace = trace
        client.store_id = store_id
        client.tree_code = _TREE_CODE[store_id]
        client.rng = random.Random()
        g = config.geometry()
        client._slot_len = g.slot_len
        client._nslots = g.slots_per_bucket
        client._bucket_len = g.bucket_len
        client._aead = AESGCM(keys.k_enc)
        client._bits = _bit_table(g.slots_per_bucket)
        client._full_mask = (1 << g.slots_per_bucket) - 1
        client._paths = client._build_paths()
        client.online_bytes = 0
        client.maintenance_bytes = 0
        client.reshuffles = 0
        client.reclaimed = 0
        client.set_state(state)
        return client
