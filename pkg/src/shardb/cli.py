"""Command-line entry point.

Subcommands:

    run            full simulation from a config file
    query-bench    per-step timing decomposition for chosen query shapes
    migrate-bench  live vs stop-restart migration comparison by table size
    balance-bench  skewed-workload balancing effect
    verify         replay a transcript and re-assert all invariants

Exit codes: 0 ok, 1 invariant violation, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench, report
from .errors import ConfigError, InvariantViolation, ShardbError
from .sim.config import SimConfig, load_config
from .sim.harness import Simulation
from .sim.replay import verify_transcript


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the RNG seed")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--format", choices=("json", "csv"), default="csv",
                   help="delimited output format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shardb",
        description="Sharded relational blockchain database simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full simulation")
    p_run.add_argument("--config", type=Path, default=None,
                       help="TOML config file (defaults apply when omitted)")
    _common(p_run)

    p_q = sub.add_parser("query-bench", help="cross-shard query step timings")
    p_q.add_argument("--query", choices=("select", "q2", "q5", "q6", "q19", "all"),
                     default="all")
    p_q.add_argument("--rows", type=int, default=60, help="rows per table")
    p_q.add_argument("--shards", type=int, default=4)
    _common(p_q)

    p_m = sub.add_parser("migrate-bench", help="live vs stop-restart migration")
    p_m.add_argument("--sizes", default="100,1000,10000",
                     help="comma-separated table sizes")
    p_m.add_argument("--drop", type=float, default=0.0,
                     help="notification drop probability")
    _common(p_m)

    p_b = sub.add_parser("balance-bench", help="inter-shard balancing effect")
    p_b.add_argument("--skew", choices=("uniform", "low", "high"), default="high")
    p_b.add_argument("--epochs", type=int, default=4)
    _common(p_b)

    p_v = sub.add_parser("verify", help="replay a transcript, exit 0 iff clean")
    p_v.add_argument("--transcript", type=Path, required=True)
    return parser


def cmd_run(args) -> int:
    if args.config is not None:
        config = load_config(args.config)
    else:
        config = SimConfig()
        config.validate()
    if args.seed is not None:
        config.seed = args.seed
    out = args.out or Path("out/run")
    sim = Simulation(config)
    summary = sim.run()
    sim.write_transcript(out)
    report.write_records(sim.round_records, out / "rounds", args.format)
    report.write_records(sim.query_records, out / "queries", args.format)
    report.write_records(sim.abort_records, out / "aborts", args.format)
    report.throughput_figure(sim.round_records, out / "figures" / "throughput.png")
    print(f"transcript: {out}")
    print(f"transcript digest: {summary['transcript_digest']}")
    print(f"committed txs: {summary['committed_txs']} "
          f"({summary['throughput_per_round']:.1f}/round), "
          f"aborts: {summary['aborts']}")
    return 0


def cmd_query_bench(args) -> int:
    shapes = ("select", "q2", "q5", "q6", "q19") if args.query == "all" \
        else (args.query,)
    out = args.out or Path("out/query-bench")
    records = bench.query_step_bench(seed=args.seed or 7, shapes=shapes,
                                     rows_per_table=args.rows,
                                     shards=args.shards)
    path = report.write_records(records, out / "steps", args.format)
    fig = report.query_steps_figure(records, out / "figures" / "steps.png")
    for rec in records:
        print(f"{rec['shape']:>7}: CL {rec['cl_rounds']:.1f} rounds, "
              f"TT {rec['tt_rounds']:.1f} rounds, "
              f"PG {rec['pg_cost']:.0f} cost units "
              f"({rec['queries']} queries)")
    print(f"wrote {path} and {fig}")
    return 0


def cmd_migrate_bench(args) -> int:
    sizes = tuple(int(s) for s in args.sizes.split(","))
    out = args.out or Path("out/migrate-bench")
    records = bench.migrate_bench(sizes=sizes, seed=args.seed or 7,
                                  drop=args.drop)
    path = report.write_records(records, out / "migrations", args.format)
    fig = report.migration_figure(records, out / "figures" / "migration.png")
    for rows_n in sizes:
        live = next(r for r in records if r["rows"] == rows_n and r["path"] == "live")
        stop = next(r for r in records
                    if r["rows"] == rows_n and r["path"] == "stop-restart")
        print(f"{rows_n:>6} rows: live interruption {live['interruption_rounds']} "
              f"rounds ({live['onchain_txs']} on-chain txs) vs stop-restart "
              f"{stop['interruption_rounds']} rounds ({stop['onchain_txs']} txs)")
    print(f"wrote {path} and {fig}")
    return 0


def cmd_balance_bench(args) -> int:
    out = args.out or Path("out/balance-bench")
    rec = bench.balance_bench(skew=args.skew, seed=args.seed or 7,
                              epochs=args.epochs)
    flat = [{
        "skew": rec["skew"],
        "pre_throughput": rec["pre_throughput"],
        "post_throughput": rec["post_throughput"],
        "speedup": rec["speedup"],
        "pre_imbalance": rec["pre_imbalance"],
        "post_imbalance": rec["post_imbalance"],
        "moves": len(rec["moves"]),
    }]
    path = report.write_records(flat, out / "balance", args.format)
    fig = report.balance_figure(rec, out / "figures" / "balance.png")
    print(f"throughput {rec['pre_throughput']:.1f} -> {rec['post_throughput']:.1f} "
          f"txs/round ({rec['speedup']:.2f}x), max/mean load "
          f"{rec['pre_imbalance']:.2f} -> {rec['post_imbalance']:.2f}, "
          f"{len(rec['moves'])} moves")
    print(f"wrote {path} and {fig}")
    return 0


def cmd_verify(args) -> int:
    failures = verify_transcript(args.transcript)
    if failures:
        for f in failures:
            print(f"violation: {f}", file=sys.stderr)
        return 1
    print("transcript verified: all invariants hold")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "query-bench": cmd_query_bench,
        "migrate-bench": cmd_migrate_bench,
        "balance-bench": cmd_balance_bench,
        "verify": cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return 2
    except FileNotFoundError as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return 2
    except (InvariantViolation, AssertionError) as ex:
        print(f"invariant violation: {ex}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
