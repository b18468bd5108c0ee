"""The indistinguishability game as a trace-comparison harness.

Two worlds are initialized with adversary-chosen, equally large but
different datasets under the same public parameters.  A script of
paired requests runs step by step; pairs must have equal leakage (same
operation type), and after every step the two observable traces are
compared positionally on (kind, store, batch size).  The game passes iff
no position ever diverges and no honest run aborts.
"""

from __future__ import annotations

import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from ..controller import ChunkIngest, Controller, SystemConfig
from ..kg import ChunkMeta
from ..trace import TraceLog

_WORDS = (
    "alpha bravo canyon delta ember falcon garnet harbor indigo jasper "
    "kelp lumen meadow nectar onyx prairie quartz russet saffron timber "
    "umber violet walnut xenon yonder zephyr"
).split()

_NAMES = ("Alice Chen", "Bob Novak", "Carol Ramos", "David Singh", "Erin Walsh")


class ScriptRejected(Exception):
    """Challenger abort: the paired requests do not have equal leakage."""


@dataclass
class GameResult:
    passed: bool
    steps_run: int
    divergence_index: int  # -1 when equivalent
    detail: str = ""


def _sentence(rng: random.Random, k: int) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(k))


def _make_ingest(rng: random.Random, item_id: int, base_ts: float) -> ChunkIngest:
    modality = rng.choice(("email", "meeting", "document", "message", "ambient"))
    meta = ChunkMeta(
        chunk_id=item_id,
        artifact_id=10_000 + item_id,
        modality=modality,
        timestamp=base_ts + item_id * 60.0,
        participants=(rng.choice(_NAMES),),
        project=rng.choice(("atlas", "borealis")),
    )
    return ChunkIngest(text=_sentence(rng, 24), meta=meta)


def _make_query(rng: random.Random) -> str:
    forms = (
        f"what did {rng.choice(_NAMES)} say about {_sentence(rng, 2)}?",
        f"in my emails, anything about {_sentence(rng, 2)}?",
        f"what happened with {_sentence(rng, 3)} last week?",
        f"find notes on {_sentence(rng, 2)}",
    )
    return rng.choice(forms)


def validate_script(pairs: list[tuple[str, str]]) -> list[str]:
    """Challenger-side leakage check: operation types must match."""
    ops = []
    for i, (a, b) in enumerate(pairs):
        if a != b:
            raise ScriptRejected(f"step {i}: leakage mismatch {a!r} vs {b!r}")
        if a not in ("query", "ingest"):
            raise ScriptRejected(f"step {i}: unknown op {a!r}")
        ops.append(a)
    return ops


def run_security_game(
    seed: int,
    steps: int = 200,
    config: Optional[SystemConfig] = None,
    init_items: int = 16,
    query_fraction: float = 0.5,
    dream_flags: tuple[bool, bool] = (True, True),
) -> GameResult:
    """One paired run: returns pass/fail with the first divergent index."""
    config = config or SystemConfig()
    script_rng = random.Random(seed)
    ops = [
        "query" if script_rng.random() < query_fraction else "ingest"
        for _ in range(steps)
    ]
    validate_script(list(zip(ops, ops)))

    roster = {"alice-chen": "Alice Chen", "bob-novak": "Bob Novak",
              "carol-ramos": "Carol Ramos", "david-singh": "David Singh",
              "erin-walsh": "Erin Walsh"}
    worlds = []
    for b in (0, 1):
        cfg = config if dream_flags[b] == config.dreaming else SystemConfig(
            **{**config.__dict__, "dreaming": dream_flags[b]}
        )
        trace = TraceLog()
        ctrl = Controller(
            cfg,
            trace=trace,
            person_roster=roster,
            projects=("atlas", "borealis"),
        )
        worlds.append((ctrl, trace, random.Random(seed * 1000 + 7 + b)))

    # Adversary-chosen datasets: equal size, different content.
    base_ts = 1_767_225_600.0
    for i in range(init_items):
        for b, (ctrl, _, rng) in enumerate(worlds):
            ctrl.ingest(_make_ingest(rng, i, base_ts), ctr=i + 1)
    for _, trace, _ in worlds:
        trace.drain()

    ctr = init_items
    next_item = init_items
    global_pos = 0
    for step, op in enumerate(ops):
        ctr += 1
        step_events = []
        for b, (ctrl, trace, rng) in enumerate(worlds):
            if op == "query":
                ctrl.query(_make_query(rng), ctr)
            else:
                ctrl.ingest(_make_ingest(rng, next_item, base_ts), ctr)
            step_events.append(trace.drain())
        if op == "ingest":
            next_item += 1
        ev0, ev1 = step_events
        n = min(len(ev0), len(ev1))
        for i in range(n):
            if ev0[i].shape() != ev1[i].shape():
                return GameResult(
                    False,
                    step + 1,
                    global_pos + i,
                    f"step {step}: {ev0[i].shape()} vs {ev1[i].shape()}",
                )
        if len(ev0) != len(ev1):
            return GameResult(
                False, step + 1, global_pos + n,
                f"step {step}: event count {len(ev0)} vs {len(ev1)}",
            )
        global_pos += n
    return GameResult(True, steps, -1)


def _run_pair(args) -> tuple[int, bool, int, str]:
    pair_index, seed, steps, config, dream_flags = args
    res = run_security_game(seed, steps, config, dream_flags=dream_flags)
    return pair_index, res.passed, res.divergence_index, res.detail


def run_game_suite(
    pairs: int,
    steps: int,
    seed: int,
    config: Optional[SystemConfig] = None,
    workers: int = 1,
    dream_flags: tuple[bool, bool] = (True, True),
) -> GameResult:
    """Run many independent paired scripts; fail on the first divergence."""
    config = config or SystemConfig()
    jobs = [
        (i, seed + i * 977, steps, config, dream_flags) for i in range(pairs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_pair, jobs, chunksize=1))
    else:
        results = [_run_pair(j) for j in jobs]
    for idx, ok, div, detail in results:
        if not ok:
            return GameResult(False, steps, div, f"pair {idx}: {detail}")
    return GameResult(True, pairs * steps, -1)
