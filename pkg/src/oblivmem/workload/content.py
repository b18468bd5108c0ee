"""Template content realization and fixed-size chunking.

Each realized artifact embeds its scenario's topic tokens plus one
artifact-unique reference token, so the hash embedder can retrieve it;
noise artifacts get generic filler and carry no scenario tag.  Raw text
is chunked into 50-word segments with a 10-word overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hawkes import RawEvent
from .persona import Persona, filler_words, noise_topic

CHUNK_WORDS = 50
CHUNK_OVERLAP = 10

# Fraction of each modality's standalone events that are routine noise.
NOISE_FRACTIONS = {
    "email": 0.60,
    "document": 0.70,
    "message": 0.40,
    "ambient": 0.30,
    "meeting": 0.10,
}

MEETING_WORDS_PER_MINUTE = 100
MESSAGE_TARGET_WORDS = 20


def chunk_words(text: str, size: int = CHUNK_WORDS, overlap: int = CHUNK_OVERLAP) -> list[str]:
    """50-word segments with 10-word overlap (stride 40)."""
    words = text.split()
    if len(words) <= size:
        return [" ".join(words)] if words else []
    stride = size - overlap
    chunks = []
    start = 0
    while start + size < len(words):
        chunks.append(" ".join(words[start : start + size]))
        start += stride
    chunks.append(" ".join(words[start:]))
    return chunks


@dataclass
class Artifact:
    event_id: int
    modality: str
    t: float  # hours
    participants: tuple
    project: Optional[str]
    scenario: Optional[str]
    noise: bool
    text: str
    parent: Optional[int]
    topic_tokens: tuple = ()
    ref_token: str = ""


def _unique_ref(event_id: int) -> str:
    return f"ref{event_id:06d}"


def _sentence(rng: np.random.Generator, tokens: list[str], n_words: int) -> str:
    words = list(tokens)
    words += filler_words(rng, max(0, n_words - len(words)))
    rng.shuffle(words)
    return " ".join(words[:n_words])


def realize(
    event: RawEvent,
    persona: Persona,
    rng: np.random.Generator,
    meeting_minutes: tuple[float, float] = (4.0, 12.0),
) -> Artifact:
    """Turn one arrival into a concrete artifact with metadata and text."""
    scenario = persona.scenario_at(event.t, rng)
    noise = rng.random() < NOISE_FRACTIONS.get(event.modality, 0.0)
    if noise:
        scenario = None

    ref = _unique_ref(event.event_id)
    if scenario is not None:
        topic = list(scenario.topic_tokens)
        project = scenario.project
        pool = list(scenario.participants)
    else:
        topic = [noise_topic(rng)]
        project = None
        pool = persona.sample_contacts(rng, 3)

    mod = event.modality
    if mod == "email":
        sender = pool[int(rng.random() * len(pool))]
        rcpt = pool[int(rng.random() * len(pool))]
        participants = tuple(sorted({sender, rcpt}))
        body = " ".join(
            _sentence(rng, topic, 12) for _ in range(int(4 + rng.random() * 6))
        )
        text = f"email from {sender} to {rcpt} about {' '.join(topic)} {ref} . {body}"
    elif mod == "meeting":
        attendees = tuple(sorted(set(pool[: int(2 + rng.random() * 4)])))
        participants = attendees
        minutes = meeting_minutes[0] + rng.random() * (meeting_minutes[1] - meeting_minutes[0])
        total_words = int(minutes * MEETING_WORDS_PER_MINUTE)
        lines = [f"meeting transcript about {' '.join(topic)} {ref} ."]
        words_so_far = 0
        while words_so_far < total_words:
            speaker = attendees[int(rng.random() * len(attendees))]
            line = f"{speaker.split()[0]} said " + _sentence(rng, topic, 14)
            lines.append(line)
            words_so_far += len(line.split())
        text = " ".join(lines)
    elif mod == "document":
        author = pool[0]
        participants = (author,)
        body = " ".join(
            _sentence(rng, topic, 14) for _ in range(int(6 + rng.random() * 12))
        )
        text = f"document draft on {' '.join(topic)} {ref} by {author} . {body}"
    elif mod == "message":
        other = pool[int(rng.random() * len(pool))]
        participants = (other,)
        text = f"message with {other} re {' '.join(topic)} {ref} " + _sentence(
            rng, topic, MESSAGE_TARGET_WORDS - 8
        )
    elif mod == "ambient":
        others = tuple(sorted(set(pool[: int(1 + rng.random() * 3)])))
        participants = others
        body = " ".join(_sentence(rng, topic, 12) for _ in range(6))
        text = f"ambient conversation with {' and '.join(others)} about {' '.join(topic)} {ref} . {body}"
    else:
        raise ValueError(f"cannot realize modality {mod!r}")

    return Artifact(
        event_id=event.event_id,
        modality=mod,
        t=event.t,
        participants=participants,
        project=project,
        scenario=scenario.scenario_id if scenario else None,
        noise=noise,
        text=text,
        parent=event.parent,
        topic_tokens=tuple(topic),
        ref_token=ref,
    )
