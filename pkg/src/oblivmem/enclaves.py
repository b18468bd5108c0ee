"""Pluggable enclave components and their deterministic test doubles.

Production deployments put a real embedding model and LLM behind these
interfaces; the doubles here are deterministic so end-to-end retrieval
properties can be asserted exactly.  Every call crossing the simulated
trust boundary is padded to its call class's fixed size and recorded as
one inter-enclave trace event by the controller.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Optional, Protocol, Sequence

import numpy as np

from .kg import HIGH, LOW, FilterSet, canonical_person


class PadOverflow(Exception):
    pass


@dataclass(frozen=True)
class PadPolicy:
    """Fixed message size per call class, in bytes."""

    traverse: int = 4096
    embed: int = 4096
    synthesize: int = 16384
    summarize: int = 16384

    def check(self, call_class: str, payload_bytes: int) -> int:
        limit = getattr(self, call_class)
        if payload_bytes > limit:
            raise PadOverflow(
                f"{call_class} payload of {payload_bytes} bytes exceeds pad {limit}"
            )
        return limit


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbedder:
    """Seeded feature-hashing bag of words into a unit-norm float32 vector."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self._salt = f"oblivmem-embed-{seed}".encode()

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float32)
        for token in re.findall(r"[a-z0-9]+", text.lower()):
            h = hashlib.blake2b(token.encode(), key=self._salt, digest_size=8).digest()
            idx = int.from_bytes(h[:4], "big") % self.dim
            sign = 1.0 if h[4] & 1 else -1.0
            vec[idx] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0:
            vec /= norm
        return vec


_MODALITY_WORDS = {
    "email": "email",
    "emails": "email",
    "mail": "email",
    "inbox": "email",
    "meeting": "meeting",
    "meetings": "meeting",
    "document": "document",
    "documents": "document",
    "doc": "document",
    "docs": "document",
    "file": "document",
    "files": "document",
    "message": "message",
    "messages": "message",
    "chat": "message",
    "chats": "message",
    "ambient": "ambient",
    "conversation": "ambient",
    "conversations": "ambient",
}

_ISO_RANGE = re.compile(r"between (\d{4}-\d{2}-\d{2}) and (\d{4}-\d{2}-\d{2})")
_ISO_AROUND = re.compile(r"around (\d{4}-\d{2}-\d{2})")
_ISO_ON = re.compile(r"\bon (\d{4}-\d{2}-\d{2})")
_PROJECT = re.compile(r"project ['\"]?([A-Za-z0-9][A-Za-z0-9_-]*)['\"]?", re.IGNORECASE)

_DAY = 86400.0


def _day_bounds(d: datetime) -> tuple[float, float]:
    start = datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp()
    return (start, start + _DAY)


class RuleBasedExtractor:
    """Deterministic predicate extraction over templated query text.

    The production path would put an LLM behind the same interface; this
    double resolves person names against the known roster, ISO or
    relative dates against the query timestamp, modality keywords, and
    project tags.
    """

    def __init__(self, person_roster: dict[str, str], projects: Sequence[str] = ()):
        # canonical id -> display name
        self.roster = dict(person_roster)
        self.projects = set(projects)
        self._name_patterns = [
            (re.compile(rf"\b{re.escape(display)}\b", re.IGNORECASE), canon)
            for canon, display in sorted(self.roster.items())
        ]

    def extract(self, query: str, now: float) -> FilterSet:
        text = query
        lower = query.lower()
        confidence: dict[str, str] = {}

        persons = frozenset(
            canon for pat, canon in self._name_patterns if pat.search(text)
        )

        modality: Optional[str] = None
        for word, mod in _MODALITY_WORDS.items():
            if re.search(rf"\b{word}\b", lower):
                modality = mod
                break

        project = None
        m = _PROJECT.search(text)
        if m and (not self.projects or m.group(1) in self.projects):
            project = m.group(1)

        temporal = None
        m = _ISO_RANGE.search(lower)
        if m:
            lo = datetime.fromisoformat(m.group(1)).replace(tzinfo=timezone.utc).timestamp()
            hi = datetime.fromisoformat(m.group(2)).replace(tzinfo=timezone.utc).timestamp() + _DAY
            temporal = (lo, hi)
        else:
            m = _ISO_AROUND.search(lower)
            if m:
                day = datetime.fromisoformat(m.group(1)).replace(tzinfo=timezone.utc)
                temporal = _day_bounds(day)
                confidence["temporal"] = LOW
            else:
                m = _ISO_ON.search(lower)
                if m:
                    day = datetime.fromisoformat(m.group(1)).replace(tzinfo=timezone.utc)
                    temporal = _day_bounds(day)
                else:
                    temporal = self._relative_window(lower, now)

        return FilterSet(
            temporal=temporal,
            persons=persons,
            modality=modality,
            project=project,
            confidence=confidence,
        )

    @staticmethod
    def _relative_window(lower: str, now: float) -> Optional[tuple[float, float]]:
        anchor = datetime.fromtimestamp(now, tz=timezone.utc)
        today = datetime(anchor.year, anchor.month, anchor.day, tzinfo=timezone.utc)
        if "today" in lower:
            return (today.timestamp(), now)
        if "yesterday" in lower:
            return ((today - timedelta(days=1)).timestamp(), today.timestamp())
        if "last week" in lower or "past week" in lower:
            return ((today - timedelta(days=7)).timestamp(), now)
        if "last month" in lower or "past month" in lower:
            return ((today - timedelta(days=30)).timestamp(), now)
        if "this year" in lower or "past year" in lower:
            return ((today - timedelta(days=365)).timestamp(), now)
        return None


NO_MEMORY_ANSWER = "no relevant memory found"


class EchoSynthesizer:
    """Answer double: echoes the retrieved chunk ids and texts."""

    def synthesize(self, chunks: Sequence[tuple[int, str]]) -> str:
        if not chunks:
            return NO_MEMORY_ANSWER
        parts = [f"[{cid}] {text}" for cid, text in chunks]
        return "recalled: " + " | ".join(parts)


class TemplateSummarizer:
    """Summary double: joins the input texts, truncated to one chunk."""

    def __init__(self, max_chars: int = 480):
        self.max_chars = max_chars

    def summarize(self, chunks: Sequence[tuple[int, str]]) -> str:
        if not chunks:
            return "summary of quiet period"
        joined = " ".join(text for _, text in chunks)
        return ("summary: " + joined)[: self.max_chars]
