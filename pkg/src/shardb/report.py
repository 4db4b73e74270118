"""Delimited outputs and matplotlib figures for the CLI benches.

Every report writes its records as CSV or JSON-lines and renders one or
two PNG figures next to them.  Rendering is headless (Agg) and optional at
call sites that pass figures=False.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_records(records: list, path: Path, fmt: str) -> Path:
    """records: list of flat dicts; fmt: 'csv' or 'json'."""
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        out = path.with_suffix(".jsonl")
        with open(out, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return out
    out = path.with_suffix(".csv")
    if not records:
        out.write_text("")
        return out
    keys = sorted({k for rec in records for k in rec})
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for rec in records:
            writer.writerow(rec)
    return out


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def throughput_figure(round_records: list, path: Path) -> Path:
    rounds = [r["round"] for r in round_records]
    committed = [r["committed"] for r in round_records]
    aborted = [r["aborted"] for r in round_records]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(rounds, committed, label="committed txs", lw=1.5)
    if any(aborted):
        ax.plot(rounds, aborted, label="aborted txs", lw=1.0, ls="--")
    ax.set_xlabel("round")
    ax.set_ylabel("transactions")
    ax.set_title("Per-round committed transactions")
    ax.legend(frameon=False)
    return _save(fig, path)


def query_steps_figure(step_records: list, path: Path) -> Path:
    """Grouped bars: confirmation latency / table transfer (rounds) and
    proof generation (cost units, second axis) per query shape."""
    shapes = [r["shape"] for r in step_records]
    x = range(len(shapes))
    width = 0.3
    fig, ax = plt.subplots(figsize=(7, 3.8))
    ax.bar([i - width / 2 for i in x], [r["cl_rounds"] for r in step_records],
           width, label="confirmation latency (rounds)")
    ax.bar([i + width / 2 for i in x], [r["tt_rounds"] for r in step_records],
           width, label="table transfer (rounds)")
    ax.set_xticks(list(x))
    ax.set_xticklabels(shapes)
    ax.set_ylabel("rounds")
    ax2 = ax.twinx()
    ax2.plot(list(x), [r["pg_cost"] for r in step_records], "k.-",
             label="proof generation (cost units)")
    ax2.set_ylabel("field multiplications")
    ax2.set_yscale("symlog")
    ax.set_title("Cross-shard query step decomposition")
    lines1, labels1 = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines1 + lines2, labels1 + labels2, frameon=False, fontsize=8)
    return _save(fig, path)


def migration_figure(records: list, path: Path) -> Path:
    sizes = sorted({r["rows"] for r in records})
    live = {r["rows"]: r for r in records if r["path"] == "live"}
    stop = {r["rows"]: r for r in records if r["path"] == "stop-restart"}
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.plot(sizes, [live[s]["interruption_rounds"] for s in sizes], "o-",
             label="live (off-chain)")
    ax1.plot(sizes, [stop[s]["interruption_rounds"] for s in sizes], "s--",
             label="stop-restart (on-chain)")
    ax1.set_xscale("log")
    ax1.set_xlabel("table rows")
    ax1.set_ylabel("service-interruption rounds")
    ax1.legend(frameon=False)
    ax2.plot(sizes, [live[s]["onchain_txs"] for s in sizes], "o-",
             label="live control txs")
    ax2.plot(sizes, [stop[s]["onchain_txs"] for s in sizes], "s--",
             label="stop-restart txs")
    ax2.set_xscale("log")
    ax2.set_yscale("log")
    ax2.set_xlabel("table rows")
    ax2.set_ylabel("on-chain transactions")
    ax2.legend(frameon=False)
    fig.suptitle("Live vs stop-restart migration")
    return _save(fig, path)


def balance_figure(records: dict, path: Path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    shards = sorted(records["pre_loads"])
    ax1.bar([s - 0.2 for s in shards],
            [records["pre_loads"][s] for s in shards], 0.4, label="before")
    ax1.bar([s + 0.2 for s in shards],
            [records["post_loads"][s] for s in shards], 0.4, label="after")
    ax1.set_xlabel("shard")
    ax1.set_ylabel("committed txs in epoch")
    ax1.legend(frameon=False)
    ax1.set_title("Per-shard load")
    series = records["throughput_timeline"]
    ax2.plot([p["round"] for p in series], [p["committed"] for p in series], lw=1.2)
    for mark in records.get("epoch_marks", []):
        ax2.axvline(mark, color="gray", ls=":", lw=0.8)
    ax2.set_xlabel("round")
    ax2.set_ylabel("committed txs")
    ax2.set_title("Throughput across balancing")
    return _save(fig, path)


def scaling_figure(records: list, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for ratio in sorted({r["cross_ratio"] for r in records}):
        pts = sorted((r["shards"], r["throughput"]) for r in records
                     if r["cross_ratio"] == ratio)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-",
                label=f"cx ratio {ratio:.0%}")
    ax.set_xlabel("shards")
    ax.set_ylabel("committed txs / round")
    ax.set_title("Throughput scaling with shard count")
    ax.legend(frameon=False)
    return _save(fig, path)
