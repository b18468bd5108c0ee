"""Persona layer: social graph, projects, and scenario arcs.

The anchor person's contacts form two layers (a 5-person close circle
and a 15-person regular layer); contact sampling weights the close
circle with 58% of the probability mass.  Scenario arcs are templated
narrative threads bound to a project, a participant subset, and a small
set of topic tokens; events that fall inside an arc's time span share
its topic so cross-modal retrieval filters have something to find.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_FIRST = (
    "Alice", "Bob", "Carol", "David", "Erin", "Frank", "Grace", "Henry",
    "Iris", "Jack", "Karen", "Liam", "Mona", "Nate", "Olga", "Paul",
    "Quinn", "Rosa", "Sam", "Tara",
)
_LAST = (
    "Chen", "Novak", "Okafor", "Ramos", "Singh", "Tanaka", "Umali", "Vogel",
    "Walsh", "Xu", "Young", "Zhou", "Abbott", "Banks", "Cruz", "Diaz",
    "Evans", "Flores", "Grant", "Hayes",
)

PROJECT_TAGS = ("atlas", "borealis", "cascade", "dune", "ember", "foxtrot")

_TOPIC_WORDS = (
    "budget", "launch", "roadmap", "migration", "hiring", "offsite",
    "redesign", "audit", "pricing", "onboarding", "benchmark", "rollout",
    "retrospective", "forecast", "prototype", "incident", "handover",
    "compliance", "training", "inventory", "renewal", "staffing",
    "latency", "capacity", "quarterly", "vendor", "contract", "release",
)

_FILLER = (
    "please", "review", "notes", "update", "thanks", "draft", "next",
    "week", "agenda", "follow", "up", "discussed", "attached", "plan",
    "status", "quick", "question", "confirm", "details", "tomorrow",
    "team", "sync", "share", "feedback", "summary", "action", "items",
)

_NOISE_TOPICS = (
    "newsletter", "digest", "promotion", "gossip", "lunch", "weather",
    "parking", "birthday", "maintenance", "survey", "reminder", "alert",
)


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    project: str
    participants: tuple  # display names
    topic_tokens: tuple
    start: float  # hours
    end: float


@dataclass
class Persona:
    close_circle: tuple
    regular_layer: tuple
    projects: tuple
    scenarios: list = field(default_factory=list)

    @property
    def everyone(self) -> tuple:
        return self.close_circle + self.regular_layer

    def roster(self) -> dict[str, str]:
        from ..kg import canonical_person

        return {canonical_person(n): n for n in self.everyone}

    def sample_contacts(self, rng: np.random.Generator, k: int) -> list[str]:
        # 58% of contact mass goes to the close circle.
        people = list(self.everyone)
        w_close = 0.58 / len(self.close_circle)
        w_reg = 0.42 / len(self.regular_layer)
        weights = np.array(
            [w_close] * len(self.close_circle) + [w_reg] * len(self.regular_layer)
        )
        weights /= weights.sum()
        k = min(k, len(people))
        idx = rng.choice(len(people), size=k, replace=False, p=weights)
        return [people[i] for i in sorted(idx)]

    def scenario_at(self, t: float, rng: np.random.Generator):
        live = [s for s in self.scenarios if s.start <= t < s.end]
        if not live:
            return None
        return live[int(rng.random() * len(live))]


def build_persona(rng: np.random.Generator, horizon_hours: float) -> Persona:
    order = rng.permutation(len(_FIRST))
    names = [f"{_FIRST[i]} {_LAST[(i * 7 + 3) % len(_LAST)]}" for i in order]
    close = tuple(names[:5])
    regular = tuple(names[5:20])
    projects = tuple(PROJECT_TAGS[: max(3, min(6, int(horizon_hours // (24 * 30)) + 3))])

    scenarios: list[Scenario] = []
    # One new arc roughly every 10 days, lasting 2-6 weeks.
    n_arcs = max(2, int(horizon_hours / (24 * 10)))
    persona = Persona(close, regular, projects)
    for i in range(n_arcs):
        start = float(rng.uniform(0, max(1.0, horizon_hours - 24)))
        length = float(rng.uniform(24 * 14, 24 * 42))
        topic = tuple(
            rng.choice(len(_TOPIC_WORDS), size=3, replace=False).tolist()
        )
        scenarios.append(
            Scenario(
                scenario_id=f"arc{i:03d}",
                project=projects[int(rng.random() * len(projects))],
                participants=tuple(persona.sample_contacts(rng, int(2 + rng.random() * 4))),
                topic_tokens=tuple(_TOPIC_WORDS[j] for j in topic),
                start=start,
                end=min(horizon_hours, start + length),
            )
        )
    persona.scenarios = scenarios
    return persona


def filler_words(rng: np.random.Generator, k: int) -> list[str]:
    return [_FILLER[int(rng.random() * len(_FILLER))] for _ in range(k)]


def noise_topic(rng: np.random.Generator) -> str:
    return _NOISE_TOPICS[int(rng.random() * len(_NOISE_TOPICS))]
