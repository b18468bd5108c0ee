"""Synthetic personal-data pipeline.

Four stages: a deterministic weekly life-state schedule modulates
per-modality baseline rates; a six-modality self-exciting arrival
process produces causally linked event times; a persona layer assigns
participants, projects, and scenario arcs; and template realizers turn
events into chunked artifacts plus recency-weighted evaluation
questions with recorded ground truth.
"""

from .schedule import LifeSchedule, MODALITIES
from .hawkes import HawkesConfig, RawEvent, SupercriticalConfig, simulate
from .persona import Persona
from .content import chunk_words, realize
from .questions import QUESTION_CATEGORIES, RecencyWeights, sample_question
from .generator import (
    WorkloadEvent,
    WorkloadProfile,
    generate_corpus,
    load_corpus,
    save_corpus,
)

__all__ = [
    "LifeSchedule",
    "MODALITIES",
    "HawkesConfig",
    "RawEvent",
    "SupercriticalConfig",
    "simulate",
    "Persona",
    "chunk_words",
    "realize",
    "QUESTION_CATEGORIES",
    "RecencyWeights",
    "sample_question",
    "WorkloadEvent",
    "WorkloadProfile",
    "generate_corpus",
    "load_corpus",
    "save_corpus",
]
