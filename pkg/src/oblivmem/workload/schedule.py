"""Deterministic weekly life-state schedule and per-modality multipliers.

Time is measured in hours from Monday 00:00.  Each hour of the week maps
to one behavioral state; each (modality, state) pair carries a rate
multiplier.  Anchored values follow empirical activity reports: no
meetings while asleep, email/query/message at 60% while commuting,
weekend queries at 2/3, messaging near baseline in the evening, elevated
documents and meetings in focus blocks.  The plain work-hours multiplier
is solved per modality so the week-averaged modulation is exactly
neutral, keeping daily volume targets intact.
"""

from __future__ import annotations

MODALITIES = ("email", "meeting", "document", "query", "message", "ambient")

ASLEEP = "asleep"
COMMUTING = "commuting"
FOCUS = "focus"
WORK = "work"
FREE_EVENING = "free_evening"
WEEKEND = "weekend"

STATES = (ASLEEP, COMMUTING, FOCUS, WORK, FREE_EVENING, WEEKEND)

_WEEKDAY_HOURS = (
    [ASLEEP] * 7
    + [COMMUTING]
    + [WORK]
    + [FOCUS] * 2
    + [WORK] * 2
    + [FOCUS] * 2
    + [WORK] * 2
    + [COMMUTING]
    + [FREE_EVENING] * 5
    + [ASLEEP]
)
_WEEKEND_HOURS = [ASLEEP] * 8 + [WEEKEND] * 15 + [ASLEEP]

WEEK_GRID: tuple = tuple(_WEEKDAY_HOURS * 5 + _WEEKEND_HOURS * 2)
assert len(WEEK_GRID) == 168

# Anchored multipliers; the WORK column is solved for weekly neutrality.
_RAW = {
    "email": {ASLEEP: 0.0, COMMUTING: 0.6, FOCUS: 0.8, FREE_EVENING: 0.5, WEEKEND: 0.3},
    "meeting": {ASLEEP: 0.0, COMMUTING: 0.0, FOCUS: 1.5, FREE_EVENING: 0.0, WEEKEND: 0.1},
    "document": {ASLEEP: 0.0, COMMUTING: 0.0, FOCUS: 2.0, FREE_EVENING: 0.2, WEEKEND: 0.2},
    "query": {ASLEEP: 0.0, COMMUTING: 0.6, FOCUS: 1.0, FREE_EVENING: 1.0, WEEKEND: 2.0 / 3.0},
    "message": {ASLEEP: 0.05, COMMUTING: 0.6, FOCUS: 0.5, FREE_EVENING: 1.0, WEEKEND: 0.7},
    "ambient": {ASLEEP: 0.0, COMMUTING: 0.3, FOCUS: 0.3, FREE_EVENING: 1.5, WEEKEND: 1.2},
}

_STATE_HOURS = {s: WEEK_GRID.count(s) for s in STATES}


def _solve_work_multiplier(modality: str) -> float:
    anchored = sum(_STATE_HOURS[s] * g for s, g in _RAW[modality].items())
    return (168.0 - anchored) / _STATE_HOURS[WORK]


MULTIPLIERS: dict[str, dict[str, float]] = {
    m: {**_RAW[m], WORK: _solve_work_multiplier(m)} for m in MODALITIES
}


class LifeSchedule:
    """Weekly cycle; hour resolution, deterministic."""

    def __init__(self, multipliers: dict | None = None):
        self.multipliers = multipliers or MULTIPLIERS
        self._grid = WEEK_GRID

    def state_at(self, t_hours: float) -> str:
        return self._grid[int(t_hours) % 168]

    def gamma(self, modality: str, t_hours: float) -> float:
        return self.multipliers[modality][self.state_at(t_hours)]

    def gammas_at(self, t_hours: float) -> dict[str, float]:
        state = self.state_at(t_hours)
        return {m: self.multipliers[m][state] for m in MODALITIES}

    @staticmethod
    def next_boundary(t_hours: float) -> float:
        """States are constant within each hour."""
        return float(int(t_hours) + 1)

    def weekly_average(self, modality: str) -> float:
        mult = self.multipliers[modality]
        return sum(mult[s] for s in self._grid) / 168.0


class FlatSchedule(LifeSchedule):
    """All multipliers 1: turns the arrival process into plain Hawkes."""

    def __init__(self):
        super().__init__({m: {s: 1.0 for s in STATES} for m in MODALITIES})
