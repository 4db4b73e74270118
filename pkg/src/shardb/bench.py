"""Benchmark drivers shared by the CLI and the acceptance suite.

All benches run desk-scale deterministic simulations and return flat
record dicts ready for report.write_records.
"""

from __future__ import annotations

import random

from . import vso
from .migration import COMPLETED, MigrationManager
from .query import make_dml_tx
from .relational.schema import Schema
from .runtime import Cluster
from .sim.config import SimConfig, WorkloadSpec
from .sim.harness import Simulation, child_rng
from .sim.workload import TABLE_SCHEMA_COLUMNS, table_name

_SHAPES = ("select", "q2", "q5", "q6", "q19")


def query_step_bench(seed: int = 7, shapes=_SHAPES, rows_per_table: int = 60,
                     shards: int = 4, rounds: int = 12) -> list:
    """Per-shape step decomposition of cross-shard queries: confirmation
    latency and table transfer in rounds, proof generation in cost units."""
    out = []
    for shape in shapes:
        cfg = SimConfig(
            seed=seed, shards=shards, nodes_per_shard=4, rounds=rounds,
            vso_capacity=max(256, 4 * rows_per_table), epoch_length=rounds,
            balancing=False,
            workload=WorkloadSpec(
                tables=2 * shards, rows_per_table=rows_per_table,
                txs_per_round=6, data_fraction=0.0, cross_shard_ratio=1.0,
                skew="uniform", query_mix={shape: 1.0}),
        )
        sim = Simulation(cfg)
        sim.run()
        cross = [q for q in sim.query_records if q["cross"]]
        n = max(1, len(cross))
        out.append({
            "shape": shape,
            "queries": len(cross),
            "cl_rounds": sum(q["cl_rounds"] for q in cross) / n,
            "tt_rounds": sum(q["tt_rounds"] for q in cross) / n,
            "pg_cost": sum(q["pg_cost"] for q in cross) / n,
            "transfer_bytes": sum(q["transfer_bytes"] for q in cross) / n,
        })
    return out


def _migration_cluster(rows_n: int, seed: int, keys) -> Cluster:
    schema = Schema("t", TABLE_SCHEMA_COLUMNS, ("id",))
    rng = child_rng(seed, "migrate-genesis")
    rows = [(i, rng.randint(0, 50), rng.randint(0, 4),
             rng.randint(-10_000, 10_000), "row") for i in range(rows_n)]
    return Cluster(placement={"t": 0}, schemas={"t": schema}, rows={"t": rows},
                   shard_count=2, keys=keys)


def _drive_migration(cluster, mgr, mig, writes: int, write_during: bool,
                     max_rounds: int = 20_000) -> dict:
    """Run rounds until the migration completes, injecting `writes` inserts
    either during the run (live path) or after completion (stop-restart)."""
    injected = 0
    committed_writes = 0
    deferred: list = []
    rounds = 0
    next_id = 10 ** 6
    onchain_txs = 0
    onchain_bytes = 0
    while mig.state.mode != COMPLETED:
        txs = mgr.pending_txs()
        if write_during and injected < writes and mig.state.mode == "dual":
            tx = make_dml_tx(cluster, [f"INSERT INTO t VALUES ({next_id + injected}, 1, 1, 0, 'w')"],
                             proposer=0)
            txs.append(mgr.prepare_data_tx(tx))
            injected += 1
        outcomes = cluster.commit(txs)
        for tx in txs:
            ok, _ = outcomes[tx.id]
            if ok and (tx.kind == "control" or
                       getattr(tx.payload, "purpose", None) == "migration"):
                onchain_txs += 1
                onchain_bytes += tx.byte_size() * len(tx.involved)
            if ok and tx.kind == "data" and not hasattr(tx.payload, "purpose"):
                committed_writes += 1
        mgr.after_round()
        rounds += 1
        if rounds > max_rounds:
            raise RuntimeError("migration did not complete")
    while injected < writes:
        tx = make_dml_tx(cluster, [f"INSERT INTO t VALUES ({next_id + injected}, 1, 1, 0, 'w')"],
                         proposer=0)
        ok, reason = cluster.commit_one(mgr.prepare_data_tx(tx))
        assert ok, reason
        injected += 1
        committed_writes += 1
    return {
        "rounds": rounds,
        "interruption_rounds": mig.state.interruption_rounds,
        "onchain_txs": onchain_txs,
        "onchain_bytes": onchain_bytes,
        "committed_writes": committed_writes,
    }


def migrate_bench(sizes=(100, 1000, 10000), seed: int = 7, drop: float = 0.0,
                  writes: int = 5, batch_size: int = 10,
                  bulk_rows_per_round: int = 2048) -> list:
    """Live vs stop-restart comparison across table sizes; both paths end
    with identical store content (asserted via digests)."""
    keys = vso.gen_key(64, seed)
    records = []
    for rows_n in sizes:
        digests = {}
        for path in ("live", "stop-restart"):
            cluster = _migration_cluster(rows_n, seed, keys)
            mgr = MigrationManager(cluster, child_rng(seed, f"drops-{rows_n}"),
                                   drop_prob=drop,
                                   bulk_rows_per_round=bulk_rows_per_round)
            if path == "live":
                mig = mgr.start_live("t", 0, 1)
            else:
                mig = mgr.start_stop_restart("t", 0, 1, batch_size=batch_size)
            stats = _drive_migration(cluster, mgr, mig, writes,
                                     write_during=(path == "live"))
            node = cluster.node_of_shard(1)
            digests[path] = node.tables["t"].content_digest(1 << 62)
            cluster.assert_replication()
            records.append({"rows": rows_n, "path": path, "drop": drop, **stats})
        if digests["live"] != digests["stop-restart"]:
            raise AssertionError(
                f"final stores diverge between paths at {rows_n} rows")
    return records


def balance_bench(skew: str = "high", seed: int = 7, shards: int = 4,
                  epoch_length: int = 15, epochs: int = 5,
                  tables: int = 8, rows_per_table: int = 30,
                  txs_per_round: int = 48, block_size: int = 12) -> dict:
    """Throughput and per-shard load before and after balancing."""
    cfg = SimConfig(
        seed=seed, shards=shards, nodes_per_shard=4,
        rounds=epoch_length * epochs, block_size=block_size,
        epoch_length=epoch_length, vso_capacity=max(256, 4 * rows_per_table),
        balancing=True,
        workload=WorkloadSpec(
            tables=tables, rows_per_table=rows_per_table,
            txs_per_round=txs_per_round, data_fraction=0.9,
            cross_shard_ratio=0.02, skew=skew,
            query_mix={"select": 0.7, "q6": 0.3}),
    )
    sim = Simulation(cfg)
    sim.run()

    def epoch_stats(epoch):
        recs = [r for r in sim.round_records if r["epoch"] == epoch]
        committed = sum(r["committed"] for r in recs)
        loads: dict[int, int] = {s: 0 for s in range(shards)}
        for r in recs:
            for sid, n in r["per_shard"].items():
                loads[sid] = loads.get(sid, 0) + n
        return committed / max(1, len(recs)), loads

    pre_tp, pre_loads = epoch_stats(0)
    post_tp, post_loads = epoch_stats(epochs - 1)

    def imbalance(loads):
        vals = list(loads.values())
        mean = sum(vals) / len(vals)
        return max(vals) / mean if mean else 0.0

    return {
        "skew": skew,
        "pre_throughput": pre_tp,
        "post_throughput": post_tp,
        "speedup": post_tp / pre_tp if pre_tp else 0.0,
        "pre_loads": pre_loads,
        "post_loads": post_loads,
        "pre_imbalance": imbalance(pre_loads),
        "post_imbalance": imbalance(post_loads),
        "moves": [m for plan in sim.balancer.plans.values() for m in plan.moves],
        "throughput_timeline": [{"round": r["round"], "committed": r["committed"]}
                                for r in sim.round_records],
        "epoch_marks": [epoch_length * (i + 1) for i in range(epochs - 1)],
    }


def scaling_bench(shard_counts=(1, 2, 4, 8), cross_ratios=(0.0, 1.0),
                  seed: int = 7, rounds: int = 24, per_shard_rate: int = 24,
                  block_size: int = 32) -> list:
    """Committed-tx rate versus shard count at different cross-shard
    ratios; demand scales with the shard count so every shard is loaded."""
    records = []
    for k in shard_counts:
        for ratio in cross_ratios:
            cfg = SimConfig(
                seed=seed, shards=k, nodes_per_shard=4, rounds=rounds,
                block_size=block_size, epoch_length=rounds, balancing=False,
                vso_capacity=256,
                workload=WorkloadSpec(
                    tables=max(2 * k, 2), rows_per_table=24,
                    txs_per_round=per_shard_rate * k,
                    data_fraction=0.8, cross_shard_ratio=ratio,
                    skew="uniform",
                    query_mix={"select": 1.0}),
            )
            sim = Simulation(cfg)
            summary = sim.run()
            records.append({
                "shards": k, "cross_ratio": ratio,
                "throughput": summary["committed_txs"] / rounds,
                "committed": summary["committed_txs"],
                "aborts": summary["aborts"],
            })
    return records
