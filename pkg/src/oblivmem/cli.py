"""Command-line entry point.

Subcommands: gen-workload, replay, game, bench-bandwidth, fuzz,
show-config.  Every command is deterministic under --seed; outputs land
in --out (or $OBLIVMEM_OUT, or the current directory).  Exit codes:
0 success, 1 property failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .controller import SystemConfig
from .harness.bench import BENCH_CONFIG, CSV_HEADER, bench_bandwidth, fit_linear, fit_log
from .harness.fuzz import fuzz_integrity
from .harness.game import run_game_suite
from .harness.replay import replay
from .workload.generator import WorkloadProfile, generate_corpus, load_corpus, save_corpus

EXIT_OK = 0
EXIT_PROPERTY_FAILURE = 1
EXIT_USAGE = 2


def _out_dir(args) -> str:
    path = args.out or os.environ.get("OBLIVMEM_OUT") or "."
    os.makedirs(path, exist_ok=True)
    return path


def _load_config(args) -> SystemConfig:
    if getattr(args, "config", None):
        return SystemConfig.from_file(args.config)
    return SystemConfig()


def cmd_gen_workload(args) -> int:
    profile = WorkloadProfile(days=args.days, seed=args.seed, scale=args.scale)
    events, _, meta = generate_corpus(profile)
    out = _out_dir(args)
    save_corpus(out, events, meta)
    print(
        f"wrote {meta['n_events']} events, {meta['n_chunks']} chunks, "
        f"{meta['n_questions']} questions to {out}"
    )
    return EXIT_OK


def cmd_replay(args) -> int:
    events, meta = load_corpus(args.corpus)
    cfg = _load_config(args)
    overrides = {}
    if args.n_target:
        overrides["n_target"] = args.n_target
    if args.ttl_years:
        # Size the store so its turnover equals the requested retention span.
        n_chunks = meta.get("n_chunks", 1)
        days = meta.get("profile", {}).get("days", 1.0)
        chunks_per_year = n_chunks / days * 365.0
        overrides["n_target"] = max(256, int(chunks_per_year * args.ttl_years))
    if overrides:
        cfg = SystemConfig(**{**cfg.__dict__, **overrides})
    n_ops = sum(len(e.chunks) if e.chunks else 1 for e in events)
    cfg = SystemConfig(**{**cfg.__dict__, "write_ratio": max(0.01, min(1.0, (n_ops - meta.get("n_questions", 0)) / max(1, n_ops)))})

    metrics = replay(events, meta, cfg, sample_every=args.sample_every)
    out = _out_dir(args)
    with open(os.path.join(out, "timeline.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["t", "clock", "live", "active", "stash_ann", "stash_data", "pending", "clusters"],
        )
        writer.writeheader()
        writer.writerows(metrics.timeline)
    summary = {
        "gt_rate": metrics.gt_rate,
        "recall_sleepy": metrics.mean_recall_sleepy,
        "recall_eager": metrics.mean_recall_eager,
        "summary_topk_share": metrics.summary_topk_share,
        "stash_max": metrics.stash_max,
        "pending_resolved": metrics.pending_resolved,
        "pending_changed": metrics.pending_changed,
        "mean_expired_lifetime": float(np.mean(metrics.expired_lifetimes))
        if metrics.expired_lifetimes
        else None,
        "mean_query_bytes": float(np.mean(metrics.query_bytes)) if metrics.query_bytes else None,
        "mean_ingest_bytes": float(np.mean(metrics.ingest_bytes)) if metrics.ingest_bytes else None,
        "n_target": cfg.n_target,
        "final": metrics.final_stats,
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=str)
    print(json.dumps({k: v for k, v in summary.items() if k != "final"}, indent=2, default=str))

    if args.check:
        active = [row["active"] for row in metrics.timeline[len(metrics.timeline) // 2 :]]
        ok = (
            metrics.stash_max <= 128
            and active
            and all(abs(a - cfg.n_target) / cfg.n_target <= 0.10 for a in active)
        )
        return EXIT_OK if ok else EXIT_PROPERTY_FAILURE
    return EXIT_OK


def cmd_game(args) -> int:
    cfg = _load_config(args)
    result = run_game_suite(
        pairs=args.pairs,
        steps=args.steps,
        seed=args.seed,
        config=cfg,
        workers=args.threads,
    )
    if result.passed:
        print(f"equivalent: {args.pairs} pairs x {args.steps} steps, no divergence")
        return EXIT_OK
    print(f"DIVERGENCE at event {result.divergence_index}: {result.detail}")
    return EXIT_PROPERTY_FAILURE


def cmd_bench_bandwidth(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = bench_bandwidth(sizes, queries=args.queries, seed=args.seed)
    out = _out_dir(args)
    path = os.path.join(out, "bandwidth.csv")
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.as_csv() + "\n")
    a, b, r2_log = fit_log(rows)
    _, _, r2_lin = fit_linear(rows)
    last = rows[-1]
    print(f"wrote {path}")
    print(
        f"opal query fit: {a:.0f} * log2(N) + {b:.0f} (R^2 = {r2_log:.4f}); "
        f"in-memory linear R^2 = {r2_lin:.4f}; ratio at N={last.n_entries}: {last.ratio:.1f}x"
    )
    if args.check:
        ok = r2_log > 0.95 and r2_lin > 0.95 and last.ratio >= 100.0
        return EXIT_OK if ok else EXIT_PROPERTY_FAILURE
    return EXIT_OK


def cmd_fuzz(args) -> int:
    report = fuzz_integrity(trials=args.trials, seed=args.seed)
    print(
        f"mutations: {report.total_detected}/{report.total_trials} detected "
        f"(buckets {report.bucket_detected}/{report.bucket_trials}, "
        f"records {report.record_detected}/{report.record_trials}, "
        f"checkpoints {report.checkpoint_detected}/{report.checkpoint_trials})"
    )
    print(
        f"stale restores rejected: {report.stale_rejected}/{report.stale_restores}; "
        f"replayed counters rejected: {report.replays_rejected}/{report.replays}"
    )
    ok = report.detection_rate == 1.0 and report.all_rejected
    return EXIT_OK if ok else EXIT_PROPERTY_FAILURE


def cmd_show_config(args) -> int:
    cfg = _load_config(args)
    sys.stdout.write(cfg.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="oblivmem",
        description="Access-pattern-hiding personal memory store: workload generation, replays, and verification.",
    )
    p.add_argument("--seed", type=int, default=7, help="global random seed")
    p.add_argument("--out", type=str, default=None, help="output directory (default $OBLIVMEM_OUT or .)")
    p.add_argument("--config", type=str, default=None, help="configuration file (key = value)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker processes where supported")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-workload", help="generate a synthetic personal-data corpus")
    g.add_argument("--days", type=float, default=90.0)
    g.add_argument("--scale", choices=("desk", "full"), default="desk")
    g.set_defaults(func=cmd_gen_workload)

    r = sub.add_parser("replay", help="replay a corpus through the full system")
    r.add_argument("--corpus", type=str, required=True)
    r.add_argument("--n-target", type=int, default=0)
    r.add_argument("--ttl-years", type=float, default=0.0)
    r.add_argument("--sample-every", type=int, default=200)
    r.add_argument("--check", action="store_true", help="exit nonzero on property failure")
    r.set_defaults(func=cmd_replay)

    q = sub.add_parser("game", help="run the trace-equivalence security game")
    q.add_argument("--pairs", type=int, default=100)
    q.add_argument("--steps", type=int, default=200)
    q.set_defaults(func=cmd_game)

    b = sub.add_parser("bench-bandwidth", help="per-operation bandwidth across store sizes")
    b.add_argument("--sizes", type=str, default="256,512,1024,2048,4096,8192,16384")
    b.add_argument("--queries", type=int, default=5)
    b.add_argument("--check", action="store_true")
    b.set_defaults(func=cmd_bench_bandwidth)

    f = sub.add_parser("fuzz", help="integrity and freshness fuzzing")
    f.add_argument("--trials", type=int, default=10_000)
    f.set_defaults(func=cmd_fuzz)

    s = sub.add_parser("show-config", help="print the effective configuration")
    s.set_defaults(func=cmd_show_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
