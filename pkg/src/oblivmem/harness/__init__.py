"""Executable verification of the design's security and efficiency claims:
an indistinguishability game over paired request scripts, an integrity
and freshness fuzzer, storage-path baselines, and long replays measuring
retention, stash occupancy, recall, and bandwidth.
"""

from .game import GameResult, ScriptRejected, run_game_suite, run_security_game
from .replay import ReplayMetrics, replay
from .bench import BenchRow, bench_bandwidth, fit_log, fit_linear
from .fuzz import FuzzReport, fuzz_integrity

__all__ = [
    "GameResult",
    "ScriptRejected",
    "run_game_suite",
    "run_security_game",
    "ReplayMetrics",
    "replay",
    "BenchRow",
    "bench_bandwidth",
    "fit_log",
    "fit_linear",
    "FuzzReport",
    "fuzz_integrity",
]
