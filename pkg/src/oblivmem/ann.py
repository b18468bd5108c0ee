"""Enclave-resident IVF index with product-quantized codes.

Full vectors live in the vector ORAM store; this module keeps only
centroids, per-item PQ residual codes, cluster membership, TTL
deadlines, and the pending-correction set.  Cluster repair (split,
merge, pending resolution) never touches storage: splits and merges run
2-means over decoded reconstructions, and corrections resolve lazily
when an ordinary access happens to materialize a pending item's full
vector.

Codes are quantized once, against the centroid of the cluster the item
was assigned to at encoding time, and keep that reference through
splits and merges; re-quantizing through lossy reconstructions would
compound error on every repair.  A lazy resolution with the true vector
re-encodes against the item's current centroid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


class AnnError(Exception):
    pass


class DuplicateId(AnnError):
    pass


class CannotMergeLast(AnnError):
    pass


@dataclass(frozen=True)
class Candidate:
    item_id: Optional[int]  # None marks a padding entry
    approx_score: float
    cluster_id: Optional[int]


@dataclass
class IvfConfig:
    dim: int = 64
    m: int = 8  # subquantizers
    bits: int = 8  # codes per subquantizer = 2^bits
    warmup_size: int = 256
    nlist_target: int = 0  # 0: ceil(sqrt(n_target))
    n_target: int = 4096
    split_factor: float = 2.0
    merge_factor: float = 0.2
    neighbor_margin: float = 0.10
    split_neighbors: int = 3
    kmeans_iters: int = 12
    nprobe_min: int = 1 << 30  # desk default: score every cluster

    def __post_init__(self):
        if self.dim % self.m != 0:
            raise AnnError(f"dim {self.dim} not divisible by m={self.m}")

    @property
    def nlist(self) -> int:
        if self.nlist_target:
            return self.nlist_target
        return max(1, int(np.ceil(np.sqrt(self.n_target))))

    @property
    def sub_dim(self) -> int:
        return self.dim // self.m

    @property
    def codewords(self) -> int:
        return 1 << self.bits


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator, iters: int = 12) -> np.ndarray:
    """Plain Lloyd iteration with sampled init; empty clusters reseed to
    the farthest point.  Deterministic given rng state."""
    n = len(points)
    k = min(k, n)
    if k == 0:
        return np.zeros((0, points.shape[1]), dtype=np.float32)
    idx = rng.choice(n, size=k, replace=False)
    centroids = points[idx].astype(np.float32).copy()
    for _ in range(iters):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        moved = False
        for c in range(k):
            sel = points[assign == c]
            if len(sel) == 0:
                far = d2.min(axis=1).argmax()
                centroids[c] = points[far]
                moved = True
            else:
                nc = sel.mean(axis=0)
                if not np.allclose(nc, centroids[c]):
                    moved = True
                centroids[c] = nc
        if not moved:
            break
    return centroids


class PqCodebooks:
    """Per-subspace codebooks trained once on the warmup sample, then frozen."""

    def __init__(self, cfg: IvfConfig):
        self.cfg = cfg
        self.tables: Optional[np.ndarray] = None  # [m, codewords, sub_dim]

    @property
    def trained(self) -> bool:
        return self.tables is not None

    def train(self, sample: np.ndarray, rng: np.random.Generator) -> None:
        cfg = self.cfg
        m, sd = cfg.m, cfg.sub_dim
        tables = np.zeros((m, cfg.codewords, sd), dtype=np.float32)
        for j in range(m):
            sub = sample[:, j * sd : (j + 1) * sd]
            cents = kmeans(sub, cfg.codewords, rng, cfg.kmeans_iters)
            tables[j, : len(cents)] = cents
        self.tables = tables

    def encode(self, residuals: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        sd = cfg.sub_dim
        dtype = np.uint8 if cfg.bits <= 8 else np.uint16
        out = np.empty((len(residuals), cfg.m), dtype=dtype)
        for j in range(cfg.m):
            sub = residuals[:, j * sd : (j + 1) * sd]
            d2 = ((sub[:, None, :] - self.tables[j][None, :, :]) ** 2).sum(axis=2)
            out[:, j] = d2.argmin(axis=1)
        return out

    def decode(self, codes: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        out = np.empty((len(codes), cfg.dim), dtype=np.float32)
        for j in range(cfg.m):
            out[:, j * cfg.sub_dim : (j + 1) * cfg.sub_dim] = self.tables[j][codes[:, j]]
        return out

    def adc_tables(self, residual_query: np.ndarray) -> np.ndarray:
        """Asymmetric distance lookup: [m, codewords] of squared norms."""
        cfg = self.cfg
        sd = cfg.sub_dim
        lut = np.empty((cfg.m, cfg.codewords), dtype=np.float32)
        for j in range(cfg.m):
            diff = self.tables[j] - residual_query[j * sd : (j + 1) * sd]
            lut[j] = (diff ** 2).sum(axis=1)
        return lut


class IvfPqIndex:
    """Streaming IVF-PQ metadata with lazy (sleepy) cluster repair."""

    def __init__(self, cfg: IvfConfig, rng: np.random.Generator, ttl: int = 0):
        self.cfg = cfg
        self.rng = rng
        self.ttl = ttl
        self.codebooks = PqCodebooks(cfg)
        # Live clusters; reference vectors for every cluster id ever
        # created are kept so codes can be decoded after repairs.
        self.centroids: dict[int, np.ndarray] = {}
        self.all_centroids: dict[int, np.ndarray] = {}
        self.members: dict[int, set[int]] = {}
        self.assignments: dict[int, int] = {}
        self.codes: dict[int, np.ndarray] = {}
        self.enc_ref: dict[int, int] = {}  # item -> centroid id its code is relative to
        self.ttl_expiry: dict[int, int] = {}
        self.pending: set[int] = set()
        self.warmup: dict[int, np.ndarray] = {}
        self._next_cluster = 0
        # counters for the harness
        self.resolved_total = 0
        self.changed_total = 0
        self.splits = 0
        self.merges = 0

    # ------------------------------------------------------------------
    @property
    def trained(self) -> bool:
        return self.codebooks.trained

    @property
    def live_count(self) -> int:
        return len(self.assignments)

    @property
    def target_mean_size(self) -> float:
        return max(1.0, self.cfg.n_target / self.cfg.nlist)

    def _new_cluster(self, centroid: np.ndarray) -> int:
        cid = self._next_cluster
        self._next_cluster += 1
        vec = centroid.astype(np.float32)
        self.centroids[cid] = vec
        self.all_centroids[cid] = vec
        self.members[cid] = set()
        return cid

    def _encode_against(self, item_id: int, vec: np.ndarray, cid: int) -> None:
        self.codes[item_id] = self.codebooks.encode((vec - self.all_centroids[cid])[None, :])[0]
        self.enc_ref[item_id] = cid

    # ------------------------------------------------------------------
    def _maybe_train(self) -> None:
        if self.trained or len(self.warmup) < self.cfg.warmup_size:
            return
        ids = list(self.warmup.keys())
        sample = np.stack([self.warmup[i] for i in ids])
        self.codebooks.train(sample, self.rng)
        cents = kmeans(sample, self.cfg.nlist, self.rng, self.cfg.kmeans_iters)
        for c in cents:
            self._new_cluster(c)
        cent_mat, cent_ids = self._centroid_matrix()
        d2 = ((sample[:, None, :] - cent_mat[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        for row, item in enumerate(ids):
            cid = cent_ids[assign[row]]
            self.assignments[item] = cid
            self.members[cid].add(item)
            self._encode_against(item, sample[row], cid)
        self.warmup.clear()

    def _centroid_matrix(self) -> tuple[np.ndarray, list[int]]:
        ids = sorted(self.centroids.keys())
        return np.stack([self.centroids[c] for c in ids]), ids

    # ------------------------------------------------------------------
    def insert(self, vec: np.ndarray, item_id: int, now: int) -> int:
        if item_id in self.assignments or item_id in self.warmup:
            raise DuplicateId(f"item {item_id} already indexed")
        vec = np.asarray(vec, dtype=np.float32)
        self.ttl_expiry[item_id] = now + self.ttl

        if not self.trained:
            self.warmup[item_id] = vec
            self.assignments[item_id] = -1  # provisional single bucket
            self._maybe_train()
            return self.assignments.get(item_id, -1)

        cent_mat, cent_ids = self._centroid_matrix()
        d2 = ((cent_mat - vec) ** 2).sum(axis=1)
        cid = cent_ids[int(d2.argmin())]
        self.assignments[item_id] = cid
        self.members[cid].add(item_id)
        self._encode_against(item_id, vec, cid)
        self.maybe_split(cid)
        return cid

    def remove(self, item_id: int) -> None:
        cid = self.assignments.pop(item_id, None)
        if cid is None:
            return
        if cid == -1:
            self.warmup.pop(item_id, None)
        else:
            self.members[cid].discard(item_id)
        self.codes.pop(item_id, None)
        self.enc_ref.pop(item_id, None)
        self.ttl_expiry.pop(item_id, None)
        self.pending.discard(item_id)
        if cid != -1 and cid in self.centroids and len(self.centroids) > 1:
            self.maybe_merge(cid)

    # ------------------------------------------------------------------
    def score(self, query: np.ndarray, admissible: Iterable[int], n: int) -> list[Candidate]:
        """Best-n approximate scores among admissible items in probed
        clusters, padded with dummy entries up to exactly n."""
        query = np.asarray(query, dtype=np.float32)
        admissible = admissible if isinstance(admissible, set) else set(admissible)

        if not self.trained:
            cands = self._score_exact_warmup(query, admissible)
        else:
            cands = self._score_pq(query, admissible, n)

        cands = cands[:n]
        while len(cands) < n:
            cands.append(Candidate(None, float("inf"), None))
        return cands

    def _score_exact_warmup(self, query, admissible) -> list[Candidate]:
        items = [i for i in self.warmup if i in admissible]
        if not items:
            return []
        mat = np.stack([self.warmup[i] for i in items])
        d2 = ((mat - query) ** 2).sum(axis=1)
        order = np.lexsort((np.array(items), d2))
        return [Candidate(items[r], float(d2[r]), -1) for r in order]

    def _score_pq(self, query, admissible, n) -> list[Candidate]:
        cent_mat, cent_ids = self._centroid_matrix()
        cd2 = ((cent_mat - query) ** 2).sum(axis=1)
        probe_order = [cent_ids[i] for i in np.lexsort((cent_ids, cd2))]

        # Probe the nearest centroids until the admissible coverage goal is
        # met, with a floor so coarse stores still see several clusters.
        floor = min(len(probe_order), max(self.cfg.nprobe_min, 1))
        chosen: list[int] = []
        covered = 0
        for cid in probe_order:
            chosen.append(cid)
            covered += sum(1 for i in self.members[cid] if i in admissible)
            if covered >= n and len(chosen) >= floor:
                break

        out: list[Candidate] = []
        luts: dict[int, np.ndarray] = {}
        m_idx = np.arange(self.cfg.m)
        for cid in chosen:
            items = sorted(i for i in self.members[cid] if i in admissible)
            if not items:
                continue
            # Items may be encoded against different reference centroids
            # (codes persist across repairs); score group by group.
            groups: dict[int, list[int]] = {}
            for i in items:
                groups.setdefault(self.enc_ref[i], []).append(i)
            for ref, group in groups.items():
                lut = luts.get(ref)
                if lut is None:
                    lut = self.codebooks.adc_tables(query - self.all_centroids[ref])
                    luts[ref] = lut
                codes = np.stack([self.codes[i] for i in group])
                scores = lut[m_idx[None, :], codes].sum(axis=1)
                out.extend(Candidate(i, float(s), cid) for i, s in zip(group, scores))
        out.sort(key=lambda c: (c.approx_score, c.item_id))
        return out

    @staticmethod
    def rerank(fetched: Sequence[tuple[int, np.ndarray]], query: np.ndarray, k: int) -> list[int]:
        """Exact ranking over fetched full vectors; dummies are excluded
        upstream.  Ties break by ascending item id."""
        if not fetched:
            return []
        query = np.asarray(query, dtype=np.float32)
        ids = np.array([i for i, _ in fetched])
        mat = np.stack([v for _, v in fetched])
        d2 = ((mat - query) ** 2).sum(axis=1)
        order = np.lexsort((ids, d2))
        return [int(ids[r]) for r in order[:k]]

    # ------------------------------------------------------------------
    def reconstruct(self, item_id: int) -> np.ndarray:
        if self.assignments.get(item_id) == -1:
            return self.warmup[item_id]
        ref = self.enc_ref[item_id]
        return self.all_centroids[ref] + self.codebooks.decode(self.codes[item_id][None, :])[0]

    def reconstruct_many(self, ids: list[int]) -> np.ndarray:
        refs = np.stack([self.all_centroids[self.enc_ref[i]] for i in ids])
        codes = np.stack([self.codes[i] for i in ids])
        return refs + self.codebooks.decode(codes)

    def maybe_split(self, cluster_id: int) -> bool:
        """Split an overgrown cluster using PQ reconstructions only."""
        if not self.trained or cluster_id not in self.centroids:
            return False
        member_ids = sorted(self.members[cluster_id])
        if len(member_ids) <= self.cfg.split_factor * self.target_mean_size:
            return False

        recon = self.reconstruct_many(member_ids)
        children = kmeans(recon, 2, self.rng, self.cfg.kmeans_iters)
        if len(children) < 2:
            return False

        parent_centroid = self.centroids[cluster_id]
        del self.centroids[cluster_id]
        del self.members[cluster_id]
        kid_a = self._new_cluster(children[0])
        kid_b = self._new_cluster(children[1])

        # Provisional membership from reconstructions; codes keep their
        # original encoding reference (requantizing a reconstruction
        # would compound quantization error), so ADC scoring stays at a
        # single quantization generation until a true-vector resolution.
        d2 = ((recon[:, None, :] - children[None, :, :]) ** 2).sum(axis=2)
        side = d2.argmin(axis=1)
        for row, item in enumerate(member_ids):
            cid = kid_a if side[row] == 0 else kid_b
            self.assignments[item] = cid
            self.members[cid].add(item)
            self.pending.add(item)

        self._mark_margin_neighbors(parent_centroid, (kid_a, kid_b))
        self.splits += 1
        return True

    def _mark_margin_neighbors(self, parent: np.ndarray, new_kids: tuple[int, int]) -> None:
        """Items in nearby clusters that may now be closer to a new child."""
        others = [c for c in self.centroids if c not in new_kids]
        if not others:
            return
        od = sorted(
            others, key=lambda c: float(((self.centroids[c] - parent) ** 2).sum())
        )[: self.cfg.split_neighbors]
        for oc in od:
            ids = sorted(self.members[oc])
            if not ids:
                continue
            recon = self.reconstruct_many(ids)
            d_own = np.sqrt(((recon - self.centroids[oc]) ** 2).sum(axis=1))
            for kid in new_kids:
                d_new = np.sqrt(((recon - self.centroids[kid]) ** 2).sum(axis=1))
                spacing = float(np.linalg.norm(self.centroids[kid] - self.centroids[oc]))
                close = (d_new - d_own) < self.cfg.neighbor_margin * spacing
                for row in np.nonzero(close)[0]:
                    self.pending.add(ids[int(row)])

    def maybe_merge(self, cluster_id: int) -> bool:
        """Fold an undersized cluster into its nearest neighbor."""
        if not self.trained or cluster_id not in self.centroids:
            return False
        member_ids = sorted(self.members[cluster_id])
        if len(member_ids) >= self.cfg.merge_factor * self.target_mean_size:
            return False
        if len(self.centroids) <= 1:
            raise CannotMergeLast("cannot merge the only remaining cluster")

        del self.centroids[cluster_id]
        del self.members[cluster_id]
        if member_ids:
            recon = self.reconstruct_many(member_ids)
            cent_mat, cent_ids = self._centroid_matrix()
            d2 = ((recon[:, None, :] - cent_mat[None, :, :]) ** 2).sum(axis=2)
            nearest = d2.argmin(axis=1)
            for row, item in enumerate(member_ids):
                cid = cent_ids[int(nearest[row])]
                self.assignments[item] = cid
                self.members[cid].add(item)
                self.pending.add(item)
        self.merges += 1
        return True

    # ------------------------------------------------------------------
    def resolve_pending(self, vectors: dict[int, np.ndarray]) -> tuple[int, int]:
        """Reassign resident pending items using their true full vectors.

        Returns (resolved, changed).  Issues no storage access: callers
        hand in vectors that an ordinary access already materialized.
        """
        if not self.pending or not self.trained:
            return 0, 0
        resolved = changed = 0
        hits = [i for i in vectors if i in self.pending]
        if not hits:
            return 0, 0
        cent_mat, cent_ids = self._centroid_matrix()
        for item in hits:
            vec = np.asarray(vectors[item], dtype=np.float32)
            d2 = ((cent_mat - vec) ** 2).sum(axis=1)
            cid = cent_ids[int(d2.argmin())]
            old = self.assignments[item]
            if cid != old:
                if old in self.members:
                    self.members[old].discard(item)
                self.members[cid].add(item)
                self.assignments[item] = cid
                changed += 1
            self._encode_against(item, vec, cid)
            self.pending.discard(item)
            resolved += 1
        self.resolved_total += resolved
        self.changed_total += changed
        return resolved, changed

    # ------------------------------------------------------------------
    def refresh_codes(self, vectors: dict[int, np.ndarray]) -> int:
        """Opportunistic repair of non-pending residents: re-encode each
        one against its current nearest centroid.  Metadata-only; the
        vectors were materialized by an ordinary access."""
        if not self.trained:
            return 0
        ids = [
            i for i in vectors
            if i in self.assignments and i not in self.pending and vectors[i] is not None
        ]
        if not ids:
            return 0
        cent_mat, cent_ids = self._centroid_matrix()
        refreshed = 0
        for item in ids:
            vec = np.asarray(vectors[item], dtype=np.float32)
            d2 = ((cent_mat - vec) ** 2).sum(axis=1)
            cid = cent_ids[int(d2.argmin())]
            old = self.assignments[item]
            if cid != old and old in self.members:
                self.members[old].discard(item)
                self.members[cid].add(item)
                self.assignments[item] = cid
            self._encode_against(item, vec, cid)
            refreshed += 1
        return refreshed

    def prune_retired_centroids(self) -> int:
        """Drop reference centroids no code points to anymore."""
        used = set(self.enc_ref.values()) | set(self.centroids.keys())
        stale = [c for c in self.all_centroids if c not in used]
        for c in stale:
            del self.all_centroids[c]
        return len(stale)

    def debug_dump(self) -> dict:
        return {
            "trained": self.trained,
            "clusters": len(self.centroids),
            "live": self.live_count,
            "pending": len(self.pending),
            "sizes": sorted(len(m) for m in self.members.values()),
            "splits": self.splits,
            "merges": self.merges,
        }

    def get_state(self) -> dict:
        return {
            "cfg": self.cfg,
            "ttl": self.ttl,
            "tables": self.codebooks.tables,
            "centroids": self.centroids,
            "all_centroids": self.all_centroids,
            "members": {c: set(m) for c, m in self.members.items()},
            "assignments": dict(self.assignments),
            "codes": dict(self.codes),
            "enc_ref": dict(self.enc_ref),
            "ttl_expiry": dict(self.ttl_expiry),
            "pending": set(self.pending),
            "warmup": dict(self.warmup),
            "next_cluster": self._next_cluster,
            "rng_state": self.rng.bit_generator.state,
        }

    def set_state(self, state: dict) -> None:
        self.cfg = state["cfg"]
        self.ttl = state["ttl"]
        self.codebooks = PqCodebooks(self.cfg)
        self.codebooks.tables = state["tables"]
        self.centroids = state["centroids"]
        self.all_centroids = state["all_centroids"]
        self.members = state["members"]
        self.assignments = state["assignments"]
        self.codes = state["codes"]
        self.enc_ref = state["enc_ref"]
        self.ttl_expiry = state["ttl_expiry"]
        self.pending = state["pending"]
        self.warmup = state["warmup"]
        self._next_cluster = state["next_cluster"]
        self.rng.bit_generator.state = state["rng_state"]


class EagerIvfIndex(IvfPqIndex):
    """Non-oblivious repair baseline: keeps true vectors shadow-side and
    reassigns immediately and exactly on every split or merge."""

    def __init__(self, cfg: IvfConfig, rng: np.random.Generator, ttl: int = 0):
        super().__init__(cfg, rng, ttl)
        self.vectors: dict[int, np.ndarray] = {}

    def insert(self, vec: np.ndarray, item_id: int, now: int) -> int:
        self.vectors[item_id] = np.asarray(vec, dtype=np.float32)
        return super().insert(vec, item_id, now)

    def remove(self, item_id: int) -> None:
        self.vectors.pop(item_id, None)
        super().remove(item_id)

    def reconstruct_many(self, ids: list[int]) -> np.ndarray:
        return np.stack([self.vectors[i] for i in ids])

    def maybe_split(self, cluster_id: int) -> bool:
        did = super().maybe_split(cluster_id)
        if did:
            self._settle()
        return did

    def maybe_merge(self, cluster_id: int) -> bool:
        did = super().maybe_merge(cluster_id)
        if did:
            self._settle()
        return did

    def _settle(self) -> None:
        # Immediate exact correction of everything the lazy path defers.
        if self.pending:
            self.resolve_pending({i: self.vectors[i] for i in self.pending})
