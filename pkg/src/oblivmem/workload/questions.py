"""Recency-weighted question sampling over the realized corpus.

Target artifacts are drawn with probability proportional to the
two-phase recency boost

    w(t) = C1 * exp(-nu * t) + C2 * (t + 1)^(-delta),   t in days,

whose exponential component dominates for roughly the first ten days
before the power-law tail takes over.  Question text is templated from
the target's metadata and (for content-addressed categories) its
distinctive tokens; the ground-truth chunk ids and the exact filter
predicates are recorded alongside.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from ..kg import HIGH, LOW, FilterSet, canonical_person
from .content import Artifact

QUESTION_CATEGORIES = (
    "single-fact",
    "knowledge-update",
    "multi-hop",
    "temporal",
    "modality",
    "person",
    "project",
)

_DAY_SECONDS = 86400.0


@dataclass(frozen=True)
class RecencyWeights:
    c1: float = 1.45
    nu: float = 0.20
    c2: float = 1.0
    delta: float = 0.68

    def weight(self, age_days: float) -> float:
        age_days = max(0.0, age_days)
        return self.c1 * np.exp(-self.nu * age_days) + self.c2 * (age_days + 1.0) ** (
            -self.delta
        )

    def weights(self, ages_days: np.ndarray) -> np.ndarray:
        a = np.maximum(ages_days, 0.0)
        return self.c1 * np.exp(-self.nu * a) + self.c2 * (a + 1.0) ** (-self.delta)


class EmptyCorpus(Exception):
    pass


@dataclass
class Question:
    text: str
    category: str
    gt_artifact_id: int
    gt_chunk_ids: tuple
    filters: FilterSet


def sample_artifact_index(
    ages_days: np.ndarray, rng: np.random.Generator, weights: RecencyWeights
) -> int:
    if len(ages_days) == 0:
        raise EmptyCorpus("no artifacts before the question time")
    w = weights.weights(ages_days)
    w = w / w.sum()
    return int(rng.choice(len(ages_days), p=w))


def _day_str(epoch: float) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%d")


def _modality_phrase(mod: str) -> str:
    return {
        "email": "emails",
        "meeting": "meetings",
        "document": "documents",
        "message": "messages",
        "ambient": "conversations",
        "query-artifact": "searches",
    }[mod]


def build_question(
    category: str,
    target: Artifact,
    target_epoch: float,
    chunk_ids: tuple,
    rng: np.random.Generator,
    related: Optional[tuple] = None,  # (child Artifact, child chunk ids) for multi-hop
) -> Question:
    topic = " ".join(target.topic_tokens)
    day = _day_str(target_epoch)
    persons = tuple(target.participants)
    person = persons[int(rng.random() * len(persons))] if persons else None

    conf: dict[str, str] = {}
    temporal = None
    f_persons: frozenset = frozenset()
    modality = None
    project = None

    if category == "single-fact":
        text = f"what were the details about {topic} {target.ref_token}?"
    elif category == "knowledge-update":
        text = f"what is the latest on {topic} {target.ref_token}?"
    elif category == "temporal":
        text = f"what happened regarding {topic} on {day}?"
        start = (
            datetime.fromtimestamp(target_epoch, tz=timezone.utc)
            .replace(hour=0, minute=0, second=0, microsecond=0)
            .timestamp()
        )
        temporal = (start, start + _DAY_SECONDS)
    elif category == "modality":
        text = f"in my {_modality_phrase(target.modality)}, what was said about {topic}?"
        modality = target.modality
    elif category == "person":
        text = f"what did {person} say about {topic}?"
        f_persons = frozenset({canonical_person(person)})
    elif category == "project":
        text = f'in project "{target.project}", what was the status of {topic}?'
        project = target.project
    elif category == "multi-hop":
        child, child_chunks = related
        text = (
            f"in my {_modality_phrase(target.modality)}, what followed up on {topic}?"
        )
        modality = target.modality
        return Question(
            text=text,
            category=category,
            gt_artifact_id=child.event_id,
            gt_chunk_ids=tuple(child_chunks),
            filters=FilterSet(
                temporal=None,
                persons=frozenset(),
                modality=modality,
                project=None,
                confidence=conf,
            ),
        )
    else:
        raise ValueError(f"unknown category {category!r}")

    return Question(
        text=text,
        category=category,
        gt_artifact_id=target.event_id,
        gt_chunk_ids=tuple(chunk_ids),
        filters=FilterSet(
            temporal=temporal,
            persons=f_persons,
            modality=modality,
            project=project,
            confidence=conf,
        ),
    )


def sample_question(
    artifacts: list,  # (Artifact, epoch, chunk_ids) realized so far
    t_now_epoch: float,
    category: str,
    rng: np.random.Generator,
    weights: RecencyWeights = RecencyWeights(),
    children_of: Optional[dict] = None,  # artifact event id -> list of indexes
) -> Question:
    """Draw the target recency-weighted, then phrase the question."""
    if not artifacts:
        raise EmptyCorpus("corpus is empty before this question")

    signal = [
        (i, a, e, c) for i, (a, e, c) in enumerate(artifacts) if not a.noise and c
    ]
    if not signal:
        raise EmptyCorpus("no signal artifacts before this question")

    ages = np.array([(t_now_epoch - e) / _DAY_SECONDS for _, _, e, _ in signal])

    if category == "multi-hop" and children_of:
        # Need a target with a realized child in another modality.
        eligible = [
            (i, a, e, c)
            for i, a, e, c in signal
            if children_of.get(a.event_id)
        ]
        if eligible:
            ages_el = np.array([(t_now_epoch - e) / _DAY_SECONDS for _, _, e, _ in eligible])
            pick = sample_artifact_index(ages_el, rng, weights)
            _, target, epoch, chunks = eligible[pick]
            kid_idx = children_of[target.event_id][0]
            child, child_epoch, child_chunks = artifacts[kid_idx]
            return build_question(
                "multi-hop", target, epoch, chunks, rng, related=(child, child_chunks)
            )
        category = "single-fact"  # no linked pairs yet

    if category == "person":
        eligible = [(i, a, e, c) for i, a, e, c in signal if a.participants]
        if eligible:
            signal = eligible
            ages = np.array([(t_now_epoch - e) / _DAY_SECONDS for _, _, e, _ in signal])
        else:
            category = "single-fact"
    if category == "project":
        eligible = [(i, a, e, c) for i, a, e, c in signal if a.project]
        if eligible:
            signal = eligible
            ages = np.array([(t_now_epoch - e) / _DAY_SECONDS for _, _, e, _ in signal])
        else:
            category = "single-fact"

    pick = sample_artifact_index(ages, rng, weights)
    _, target, epoch, chunks = signal[pick]

    if category == "knowledge-update" and target.scenario:
        # The freshest artifact of the same scenario is the real answer.
        same = [
            (a, e, c)
            for a, e, c in artifacts
            if a.scenario == target.scenario and not a.noise and c
        ]
        target, epoch, chunks = max(same, key=lambda x: x[1])

    return build_question(category, target, epoch, chunks, rng)
