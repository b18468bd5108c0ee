"""Corpus orchestration: timeline -> artifacts -> chunks -> questions.

Output schema (events.jsonl, one JSON object per line):

    event_id     int
    t            float, epoch seconds
    modality     email|meeting|document|query|message|ambient
    parent       int | null        (triggering event)
    participants [display names]
    project      str | null
    scenario     str | null
    noise        bool
    artifact_id  int | null        (null for query events)
    text         str | null
    chunks       [{"id": int, "text": str}] | null
    qa           null | {"question", "category", "gt_artifact_id",
                         "gt_chunk_ids", "filters"}

meta.json records the profile, seed, person roster, and project tags;
questions.jsonl repeats just the query events for convenience.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..kg import ChunkMeta, FilterSet
from .content import Artifact, chunk_words, realize
from .hawkes import DESK_DAILY_TARGETS, FULL_DAILY_TARGETS, HawkesConfig, simulate
from .persona import Persona, build_persona
from .questions import (
    QUESTION_CATEGORIES,
    EmptyCorpus,
    Question,
    RecencyWeights,
    sample_question,
)
from .schedule import LifeSchedule

DEFAULT_EPOCH_START = 1767225600.0  # 2026-01-01T00:00:00Z
NOISE_QUERY_FRACTION = 0.2


@dataclass(frozen=True)
class WorkloadProfile:
    days: float = 30.0
    seed: int = 7
    scale: str = "desk"  # desk | full
    epoch_start: float = DEFAULT_EPOCH_START
    meeting_minutes: tuple = (4.0, 12.0)

    def hawkes_config(self) -> HawkesConfig:
        targets = DESK_DAILY_TARGETS if self.scale == "desk" else FULL_DAILY_TARGETS
        return HawkesConfig(daily_targets=dict(targets))


@dataclass
class WorkloadEvent:
    event_id: int
    t: float  # epoch seconds
    modality: str
    parent: Optional[int]
    participants: tuple
    project: Optional[str]
    scenario: Optional[str]
    noise: bool
    artifact_id: Optional[int]
    text: Optional[str]
    chunks: Optional[list]  # [(chunk_id, text)]
    qa: Optional[dict]

    def to_json(self) -> str:
        return json.dumps(
            {
                "event_id": self.event_id,
                "t": self.t,
                "modality": self.modality,
                "parent": self.parent,
                "participants": list(self.participants),
                "project": self.project,
                "scenario": self.scenario,
                "noise": self.noise,
                "artifact_id": self.artifact_id,
                "text": self.text,
                "chunks": [{"id": c, "text": s} for c, s in self.chunks]
                if self.chunks is not None
                else None,
                "qa": self.qa,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(line: str) -> "WorkloadEvent":
        d = json.loads(line)
        return WorkloadEvent(
            event_id=d["event_id"],
            t=d["t"],
            modality=d["modality"],
            parent=d.get("parent"),
            participants=tuple(d.get("participants") or ()),
            project=d.get("project"),
            scenario=d.get("scenario"),
            noise=bool(d.get("noise")),
            artifact_id=d.get("artifact_id"),
            text=d.get("text"),
            chunks=[(c["id"], c["text"]) for c in d["chunks"]]
            if d.get("chunks") is not None
            else None,
            qa=d.get("qa"),
        )

    def chunk_metas(self) -> list[ChunkMeta]:
        assert self.chunks is not None
        return [
            ChunkMeta(
                chunk_id=cid,
                artifact_id=self.artifact_id,
                modality=self.modality,
                timestamp=self.t,
                participants=self.participants,
                project=self.project,
                source_links=(self.parent,) if self.parent is not None else (),
            )
            for cid, _ in self.chunks
        ]


def generate_corpus(
    profile: WorkloadProfile,
) -> tuple[list[WorkloadEvent], Persona, dict]:
    """Produce the full event stream with realized content and questions."""
    horizon = profile.days * 24.0
    rng = np.random.default_rng(profile.seed)
    persona = build_persona(rng, horizon)
    schedule = LifeSchedule()
    raw = simulate(profile.hawkes_config(), horizon, seed=profile.seed + 1, schedule=schedule)

    weights = RecencyWeights()
    events: list[WorkloadEvent] = []
    realized: list = []  # (Artifact, epoch, chunk_ids) in time order
    children_of: dict[int, list[int]] = {}
    next_chunk = 0
    n_questions = 0
    cat_cursor = 0

    for ev in raw:
        epoch = profile.epoch_start + ev.t * 3600.0
        if ev.modality == "query":
            qa = None
            text = "search"
            if realized and rng.random() >= NOISE_QUERY_FRACTION:
                category = QUESTION_CATEGORIES[cat_cursor % len(QUESTION_CATEGORIES)]
                cat_cursor += 1
                try:
                    q = sample_question(
                        realized, epoch, category, rng, weights, children_of
                    )
                    qa = {
                        "question": q.text,
                        "category": q.category,
                        "gt_artifact_id": q.gt_artifact_id,
                        "gt_chunk_ids": list(q.gt_chunk_ids),
                        "filters": q.filters.to_dict(),
                    }
                    text = q.text
                    n_questions += 1
                except EmptyCorpus:
                    pass
            events.append(
                WorkloadEvent(
                    event_id=ev.event_id,
                    t=epoch,
                    modality="query",
                    parent=ev.parent,
                    participants=(),
                    project=None,
                    scenario=None,
                    noise=qa is None,
                    artifact_id=None,
                    text=text,
                    chunks=None,
                    qa=qa,
                )
            )
            continue

        art = realize(ev, persona, rng, profile.meeting_minutes)
        pieces = chunk_words(art.text)
        chunk_ids = tuple(range(next_chunk, next_chunk + len(pieces)))
        next_chunk += len(pieces)
        chunks = list(zip(chunk_ids, pieces))
        realized.append((art, epoch, chunk_ids))
        if art.parent is not None:
            children_of.setdefault(art.parent, []).append(len(realized) - 1)

        events.append(
            WorkloadEvent(
                event_id=ev.event_id,
                t=epoch,
                modality=art.modality,
                parent=art.parent,
                participants=art.participants,
                project=art.project,
                scenario=art.scenario,
                noise=art.noise,
                artifact_id=art.event_id,
                text=art.text,
                chunks=chunks,
                qa=None,
            )
        )

    meta = {
        "profile": {
            "days": profile.days,
            "seed": profile.seed,
            "scale": profile.scale,
            "epoch_start": profile.epoch_start,
        },
        "roster": persona.roster(),
        "projects": list(persona.projects),
        "n_events": len(events),
        "n_chunks": next_chunk,
        "n_questions": n_questions,
    }
    return events, persona, meta


def save_corpus(out_dir: str, events: list[WorkloadEvent], meta: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "events.jsonl"), "w") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")
    with open(os.path.join(out_dir, "questions.jsonl"), "w") as fh:
        for ev in events:
            if ev.qa is not None:
                fh.write(json.dumps({"t": ev.t, **ev.qa}, sort_keys=True) + "\n")
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_corpus(path: str) -> tuple[list[WorkloadEvent], dict]:
    with open(os.path.join(path, "events.jsonl")) as fh:
        events = [WorkloadEvent.from_json(line) for line in fh if line.strip()]
    with open(os.path.join(path, "meta.json")) as fh:
        meta = json.load(fh)
    return events, meta
