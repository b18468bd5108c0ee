"""Metadata-only knowledge graph over artifacts, chunks, summaries,
persons, and projects.

The graph stores identifiers, timestamps, modality labels, participant
ids, project tags, and structural edges; never any chunk text.  All
updates are deterministic functions of ingested metadata, and traversal
resolves filter predicates entirely in enclave memory: filtering changes
which items are eligible, never how many storage accesses occur.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Optional

MODALITIES = ("email", "meeting", "document", "message", "ambient", "query-artifact")

HIGH = "high"
LOW = "low"


class KgError(Exception):
    pass


class MalformedMetadata(KgError):
    pass


def canonical_person(name: str) -> str:
    """Canonical person id: lowercased alphanumeric words joined by '-'."""
    words = re.findall(r"[a-z0-9]+", name.lower())
    if not words:
        raise MalformedMetadata(f"cannot canonicalize person name {name!r}")
    return "-".join(words)


@dataclass(frozen=True)
class FilterSet:
    temporal: Optional[tuple[float, float]] = None
    persons: frozenset = frozenset()
    modality: Optional[str] = None
    project: Optional[str] = None
    confidence: dict = field(default_factory=dict)  # predicate name -> high|low

    def __post_init__(self):
        if self.temporal is not None and self.temporal[0] > self.temporal[1]:
            raise KgError("temporal window must satisfy t_lo <= t_hi")

    def conf(self, name: str) -> str:
        return self.confidence.get(name, HIGH)

    def to_dict(self) -> dict:
        return {
            "temporal": list(self.temporal) if self.temporal else None,
            "persons": sorted(self.persons),
            "modality": self.modality,
            "project": self.project,
            "confidence": dict(self.confidence),
        }

    @staticmethod
    def from_dict(d: dict) -> "FilterSet":
        return FilterSet(
            temporal=tuple(d["temporal"]) if d.get("temporal") else None,
            persons=frozenset(d.get("persons") or ()),
            modality=d.get("modality"),
            project=d.get("project"),
            confidence=dict(d.get("confidence") or {}),
        )


@dataclass(frozen=True)
class ChunkMeta:
    """Ingest-time metadata accompanying one fixed-size chunk."""

    chunk_id: int
    artifact_id: int
    modality: Optional[str] = None
    timestamp: Optional[float] = None
    participants: tuple = ()
    project: Optional[str] = None
    source_links: tuple = ()  # artifact ids this artifact derives from
    is_summary: bool = False
    summarized_artifacts: tuple = ()


@dataclass
class ArtifactNode:
    artifact_id: int
    modality: Optional[str]
    timestamp: Optional[float]
    persons: set
    project: Optional[str]
    links: set  # undirected source-link neighbors (artifact ids)
    chunk_ids: list
    is_summary: bool
    summarized: tuple
    seq: int  # ingest order


@dataclass
class TraverseResult:
    chunk_ids: set
    relaxation_level: int
    modality_applied: bool


class KnowledgeGraph:
    def __init__(self) -> None:
        self.artifacts: dict[int, ArtifactNode] = {}
        self.chunk_artifact: dict[int, int] = {}
        self.person_names: dict[str, str] = {}  # canonical -> display
        self.projects: set = set()
        self._seq = 0

    # ------------------------------------------------------------------
    def update(self, meta: ChunkMeta) -> None:
        if meta.chunk_id in self.chunk_artifact:
            raise MalformedMetadata(f"chunk {meta.chunk_id} already present")
        if meta.modality is not None and meta.modality not in MODALITIES and not meta.is_summary:
            raise MalformedMetadata(f"unknown modality {meta.modality!r}")

        canon = []
        for name in meta.participants:
            cid = canonical_person(name)
            self.person_names.setdefault(cid, name)
            canon.append(cid)
        if meta.project is not None:
            self.projects.add(meta.project)

        node = self.artifacts.get(meta.artifact_id)
        if node is None:
            node = ArtifactNode(
                artifact_id=meta.artifact_id,
                modality=meta.modality,
                timestamp=meta.timestamp,
                persons=set(canon),
                project=meta.project,
                links=set(meta.source_links),
                chunk_ids=[],
                is_summary=meta.is_summary,
                summarized=tuple(meta.summarized_artifacts),
                seq=self._seq,
            )
            self._seq += 1
            self.artifacts[meta.artifact_id] = node
            for other in node.links:
                if other in self.artifacts:
                    self.artifacts[other].links.add(meta.artifact_id)
        else:
            node.persons.update(canon)

        node.chunk_ids.append(meta.chunk_id)
        self.chunk_artifact[meta.chunk_id] = meta.artifact_id

    def remove_chunk(self, chunk_id: int) -> None:
        aid = self.chunk_artifact.pop(chunk_id, None)
        if aid is None:
            return
        node = self.artifacts.get(aid)
        if node is None:
            return
        try:
            node.chunk_ids.remove(chunk_id)
        except ValueError:
            pass
        if not node.chunk_ids:
            for other in node.links:
                peer = self.artifacts.get(other)
                if peer is not None:
                    peer.links.discard(aid)
            del self.artifacts[aid]

    # ------------------------------------------------------------------
    def live_chunk_ids(self) -> set:
        return set(self.chunk_artifact.keys())

    def _artifacts_matching(self, f: FilterSet) -> list[ArtifactNode]:
        out = []
        for node in self.artifacts.values():
            if f.temporal is not None:
                if node.timestamp is None or not (
                    f.temporal[0] <= node.timestamp <= f.temporal[1]
                ):
                    continue
            if f.persons and not f.persons.issubset(node.persons):
                continue
            if f.modality is not None and node.modality != f.modality:
                continue
            if f.project is not None and node.project != f.project:
                continue
            out.append(node)
        return out

    @staticmethod
    def _widen(window: tuple[float, float], factor: float = 2.0) -> tuple[float, float]:
        lo, hi = window
        center = (lo + hi) / 2.0
        half = max((hi - lo) / 2.0, 1.0) * factor
        return (center - half, center + half)

    def traverse(self, filters: FilterSet, min_candidates: int = 200) -> TraverseResult:
        """Resolve predicates with the deterministic relaxation cascade.

        High-confidence predicates apply as hard constraints; low ones
        are pre-widened (temporal) or dropped (person/project/modality).
        If too few candidates survive, predicates relax in brittleness
        order: person, project, modality, then temporal widening (x2, up
        to 3 steps), then temporal dropped.
        """
        f = filters
        if f.temporal is not None and f.conf("temporal") == LOW:
            f = replace(f, temporal=self._widen(f.temporal))
        if f.persons and f.conf("persons") == LOW:
            f = replace(f, persons=frozenset())
        if f.project is not None and f.conf("project") == LOW:
            f = replace(f, project=None)
        if f.modality is not None and f.conf("modality") == LOW:
            f = replace(f, modality=None)

        level = 0
        widens = 0
        while True:
            nodes = self._artifacts_matching(f)
            chunks = set()
            for node in nodes:
                chunks.update(node.chunk_ids)
            if len(chunks) >= min_candidates:
                break
            if f.persons:
                f = replace(f, persons=frozenset())
            elif f.project is not None:
                f = replace(f, project=None)
            elif f.modality is not None:
                f = replace(f, modality=None)
            elif f.temporal is not None and widens < 3:
                f = replace(f, temporal=self._widen(f.temporal))
                widens += 1
            elif f.temporal is not None:
                f = replace(f, temporal=None)
            else:
                break  # no predicates remain
            level += 1

        modality_applied = f.modality is not None
        result = TraverseResult(chunks, level, modality_applied)
        if modality_applied:
            result.chunk_ids = self.percolate(result.chunk_ids, f)
        return result

    def percolate(self, chunk_ids: set, filters: FilterSet) -> set:
        """Add chunks one source-link hop away from admitted artifacts.

        Expands across modality boundaries (a meeting's follow-up email,
        say) while honoring every non-modality predicate; monotone.
        """
        out = set(chunk_ids)
        admitted_artifacts = {
            self.chunk_artifact[c] for c in chunk_ids if c in self.chunk_artifact
        }
        non_modality = replace(filters, modality=None)
        for aid in admitted_artifacts:
            node = self.artifacts.get(aid)
            if node is None:
                continue
            for other in node.links:
                peer = self.artifacts.get(other)
                if peer is None:
                    continue
                if self._passes_non_modality(peer, non_modality):
                    out.update(peer.chunk_ids)
        return out

    def _passes_non_modality(self, node: ArtifactNode, f: FilterSet) -> bool:
        if f.temporal is not None:
            if node.timestamp is None or not (f.temporal[0] <= node.timestamp <= f.temporal[1]):
                return False
        if f.persons and not f.persons.issubset(node.persons):
            return False
        if f.project is not None and node.project != f.project:
            return False
        return True

    # ------------------------------------------------------------------
    def recent(self, n_artifacts: int) -> list[int]:
        """Chunks of the last n non-summary artifacts by ingest order."""
        nodes = sorted(
            (n for n in self.artifacts.values() if not n.is_summary),
            key=lambda n: n.seq,
        )
        out: list[int] = []
        for node in nodes[-n_artifacts:]:
            out.extend(node.chunk_ids)
        return out

    # ------------------------------------------------------------------
    def stats(self) -> dict:
        return {
            "artifacts": len(self.artifacts),
            "chunks": len(self.chunk_artifact),
            "persons": len(self.person_names),
            "projects": len(self.projects),
            "summaries": sum(1 for n in self.artifacts.values() if n.is_summary),
        }

    def to_debug_json(self) -> str:
        return json.dumps(self.stats(), sort_keys=True)

    def serialized(self) -> bytes:
        """Canonical serialization of the full graph (content-free)."""
        payload = {
            "artifacts": [
                {
                    "id": n.artifact_id,
                    "modality": n.modality,
                    "timestamp": n.timestamp,
                    "persons": sorted(n.persons),
                    "project": n.project,
                    "links": sorted(n.links),
                    "chunks": list(n.chunk_ids),
                    "summary": n.is_summary,
                    "summarized": list(n.summarized),
                    "seq": n.seq,
                }
                for n in sorted(self.artifacts.values(), key=lambda n: n.artifact_id)
            ],
            "persons": dict(sorted(self.person_names.items())),
            "projects": sorted(self.projects),
        }
        return json.dumps(payload, sort_keys=True).encode()
