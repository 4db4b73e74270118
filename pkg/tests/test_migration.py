import random

import pytest

from shardb import vso
from shardb.migration import (COMPLETED, DUAL, LiveMigration, MigrationManager,
                              Notification, table_metadata)
from shardb.query import make_dml_tx, make_simple_query_tx
from shardb.relational.schema import Schema, Table
from shardb.runtime import Cluster
from shardb.wire import MigrationInit

KEYS = vso.gen_key(64, seed=31)


def migration_cluster(rows_n=20, **kw):
    schemas = {"t": Schema("t", (("id", "int"), ("v", "int")), ("id",))}
    rows = {"t": [(i, i * 10) for i in range(rows_n)]}
    kw.setdefault("keys", KEYS)
    return Cluster(placement={"t": 0}, schemas=schemas, rows=rows,
                   shard_count=2, **kw)


def drive(cluster, mgr, mig, writes=0, max_rounds=300):
    injected = 0
    rounds = 0
    while mig.state.mode != COMPLETED:
        txs = mgr.pending_txs()
        if writes and injected < writes and mig.state.mode == DUAL:
            tx = make_dml_tx(cluster, [f"INSERT INTO t VALUES ({100 + injected}, 7)"],
                             proposer=0)
            txs.append(mgr.prepare_data_tx(tx))
            injected += 1
        outcomes = cluster.commit(txs)
        for tid, (ok, reason) in outcomes.items():
            assert ok, reason
        mgr.after_round()
        rounds += 1
        assert rounds < max_rounds, "migration did not complete"
    return rounds, injected


def test_metadata_is_checkpoint_root():
    cluster = migration_cluster(rows_n=4)
    table = cluster.node_of_shard(0).tables["t"]
    m0 = table_metadata(table, 0)
    table.insert((99, 0), b"tx", 1)
    assert table_metadata(table, 0) == m0       # historical snapshot stable
    assert table_metadata(table, 1) != m0
    assert table_metadata(Table(table.schema), 0) == b"\x00" * 32


@pytest.mark.parametrize("drop", [0.0, 0.2, 0.5])
def test_live_migration_durability_under_drops(drop):
    cluster = migration_cluster(rows_n=30)
    mgr = MigrationManager(cluster, random.Random(9), drop_prob=drop,
                           bulk_rows_per_round=8)
    mig = mgr.start_live("t", 0, 1)
    rounds, injected = drive(cluster, mgr, mig, writes=5)
    st = mig.state
    assert len(st.control_tx_ids) == 3
    assert st.announced_total == injected == st.committed_dual
    dest = cluster.node_of_shard(1)
    live = [r.values for _, r in dest.tables["t"].snapshot(dest.height)]
    assert len(live) == 30 + injected  # durability: nothing lost
    assert cluster.locations().shard_of("t") == 1
    assert "t" not in cluster.node_of_shard(0).tables
    cluster.assert_replication()
    if drop > 0:
        assert st.notif_dropped > 0  # losses actually happened and were healed


def test_dual_mode_sequence_numbers_are_dense():
    cluster = migration_cluster(rows_n=10)
    mgr = MigrationManager(cluster, random.Random(1), bulk_rows_per_round=2)
    mig = mgr.start_live("t", 0, 1)
    drive(cluster, mgr, mig, writes=4)
    seqs = sorted(mgr.dual_txs["t"])
    assert seqs == [1, 2, 3, 4]


def test_gap_refetch_on_missing_notification():
    cluster = migration_cluster(rows_n=12)
    mgr = MigrationManager(cluster, random.Random(3), drop_prob=0.9,
                           bulk_rows_per_round=3)
    mig = mgr.start_live("t", 0, 1)
    drive(cluster, mgr, mig, writes=3)
    assert mig.state.announced_total == 3
    refetches = sum(p.refetches for p in mig.dest_nodes.values())
    assert refetches > 0  # most gossips dropped; gaps were pulled explicitly


def test_forged_notification_rejected():
    cluster = migration_cluster(rows_n=6)
    mgr = MigrationManager(cluster, random.Random(4), bulk_rows_per_round=3)

    def forge(note, dest_node):
        bad_proof = type(note.proof)(note.proof.index,
                                     [(b"\x00" * 32, False)] * len(note.proof.path),
                                     note.proof.root)
        return Notification(note.tx, note.source_shard, note.height,
                            bad_proof, note.seq)

    mgr._tamper_notification = forge
    mig = mgr.start_live("t", 0, 1)
    drive(cluster, mgr, mig, writes=2)
    # forged gossip rejected; the refetch path still delivered everything
    assert any(e.get("event") == "bad-notification" for e in mig.log)
    dest = cluster.node_of_shard(1)
    assert len(dest.tables["t"].snapshot(dest.height)) == 8


def test_byzantine_metadata_aborts_then_retries():
    cluster = migration_cluster(rows_n=8)
    mgr = MigrationManager(cluster, random.Random(5), bulk_rows_per_round=8)
    tampers = {"left": 2}

    def tamper(payload: MigrationInit):
        if tampers["left"] > 0:
            tampers["left"] -= 1
            return MigrationInit(payload.table, payload.source, payload.dest,
                                 b"\xff" * 32, payload.checkpoint_height)
        return payload

    mgr._tamper_init = tamper
    mig = mgr.start_live("t", 0, 1)
    aborts = 0
    rounds = 0
    while mig.state.mode != COMPLETED and rounds < 60:
        outcomes = cluster.commit(mgr.pending_txs())
        aborts += sum(1 for ok, _ in outcomes.values() if not ok)
        mgr.after_round()
        rounds += 1
    assert mig.state.mode == COMPLETED
    assert aborts == 2  # both tampered init proposals aborted, then success


def test_tampered_bulk_chunk_rejected_and_refetched():
    cluster = migration_cluster(rows_n=10)
    mgr = MigrationManager(cluster, random.Random(6), bulk_rows_per_round=4)
    flips = {"left": 3}

    def tamper(wire_row, dest_node):
        if dest_node == 4 and flips["left"] > 0:
            flips["left"] -= 1
            return type(wire_row)((wire_row.values[0], 10**6), wire_row.txid,
                                  wire_row.seq, wire_row.valid)
        return wire_row

    mgr._tamper_chunk = tamper
    mig = mgr.start_live("t", 0, 1)
    drive(cluster, mgr, mig)
    assert mig.dest_nodes[4].rejected_chunks >= 1
    dest = cluster.node_of_shard(1)
    assert all(r.values[1] != 10**6 for r in dest.tables["t"].rows)
    cluster.assert_replication()


def test_precopy_skips_post_init_bulk():
    cluster = migration_cluster(rows_n=16)
    mgr = MigrationManager(cluster, random.Random(7), bulk_rows_per_round=4)
    mig = mgr.start_live("t", 0, 1, precopy=True)
    for _ in range(6):  # pre-copy streams during init mode
        mig._advance_bulk()
    drive(cluster, mgr, mig)
    assert mig.state.bulk_bytes == 0  # nothing re-sent after the checkpoint
    assert mig.state.precopy_bytes > 0
    assert any(e.get("event") == "precopy-hit" for e in mig.log)


def test_stale_precopy_discarded_and_refetched():
    cluster = migration_cluster(rows_n=8)
    mgr = MigrationManager(cluster, random.Random(8), bulk_rows_per_round=100)
    mig = mgr.start_live("t", 0, 1, precopy=True)
    mig._advance_bulk()  # precopy completes before the checkpoint commits
    # simulate a divergent pre-download at one node: it must not match the
    # on-chain metadata and forces a validated re-transfer
    victim = mig.dest_nodes[4]
    victim.bulk_rows = victim.bulk_rows[:-1]
    drive(cluster, mgr, mig)
    assert mig.state.bulk_bytes > 0  # stale pre-copy discarded, re-sent
    dest = cluster.node_of_shard(1)
    assert len(dest.tables["t"].rows) == 8
    cluster.assert_replication()


def test_data_tx_rejected_during_init_and_handover():
    cluster = migration_cluster(rows_n=40)
    mgr = MigrationManager(cluster, random.Random(9), bulk_rows_per_round=5)
    mig = mgr.start_live("t", 0, 1)
    # init control tx and a data tx in the same round: data is excluded
    txs = mgr.pending_txs()
    data = make_dml_tx(cluster, ["INSERT INTO t VALUES (500, 1)"], proposer=0)
    outcomes = cluster.commit(txs + [data])
    assert outcomes[data.id][0] is False
    assert "migration-init" in outcomes[data.id][1]
    mgr.after_round()
    # dual mode: a tx without its dense sequence number is rejected
    assert mig.state.mode == DUAL
    raw = make_dml_tx(cluster, ["INSERT INTO t VALUES (501, 1)"], proposer=0)
    ok, reason = cluster.commit_one(raw)
    assert not ok and "dual sequence" in reason
    seq = mgr.prepare_data_tx(raw)
    with_seq = cluster.commit_one(seq)
    assert with_seq[0], with_seq[1]


def test_exclusive_ownership_timeline():
    cluster = migration_cluster(rows_n=12)
    mgr = MigrationManager(cluster, random.Random(11), bulk_rows_per_round=4)
    mig = mgr.start_live("t", 0, 1)
    commits = []  # (shard, height, txid) for data txs on t
    def watch(block, shard_id):
        for tx in block.txs:
            if tx.kind == "data":
                commits.append((shard_id, block.header.height))
    cluster.on_commit.append(watch)
    _rounds, injected = drive(cluster, mgr, mig, writes=4)
    before_post = len(commits)
    assert before_post == injected
    # every data commit before completion happened at the source shard
    assert all(s == 0 for s, _ in commits[:before_post])
    # post-completion write lands on the destination shard only
    post = make_dml_tx(cluster, ["INSERT INTO t VALUES (700, 1)"], proposer=4)
    assert cluster.commit_one(post)[0]
    assert commits[before_post:] and all(s == 1 for s, _ in commits[before_post:])


def test_stop_restart_equivalence_and_counts():
    rows_n = 25
    results = {}
    for path in ("live", "stop"):
        cluster = migration_cluster(rows_n=rows_n)
        mgr = MigrationManager(cluster, random.Random(13), bulk_rows_per_round=8)
        if path == "live":
            mig = mgr.start_live("t", 0, 1)
            drive(cluster, mgr, mig, writes=3)
        else:
            mig = mgr.start_stop_restart("t", 0, 1, batch_size=10)
            drive(cluster, mgr, mig)
            for i in range(3):
                tx = make_dml_tx(cluster, [f"INSERT INTO t VALUES ({100 + i}, 7)"],
                                 proposer=4)
                assert cluster.commit_one(tx)[0]
        dest = cluster.node_of_shard(1)
        results[path] = dest.tables["t"].content_digest(1 << 62)
        if path == "stop":
            assert mig.total_batches == 3  # ceil(25 / 10)
            assert mig.state.interruption_rounds >= mig.total_batches + 1
    assert results["live"] == results["stop"]


def test_stop_restart_empty_table():
    cluster = migration_cluster(rows_n=0)
    mgr = MigrationManager(cluster, random.Random(14))
    mig = mgr.start_stop_restart("t", 0, 1, batch_size=10)
    rounds, _ = drive(cluster, mgr, mig)
    assert mig.total_batches == 0  # just the end marker
    assert cluster.locations().shard_of("t") == 1


def test_migration_waits_for_inflight_queries():
    cluster = migration_cluster(rows_n=6)
    mgr = MigrationManager(cluster, random.Random(15))
    locked = {"t": True}
    mgr.query_lock = lambda table: locked.get(table, False)
    assert mgr.start_live("t", 0, 1) is None
    assert mgr.pending_starts
    mgr.after_round()
    assert "t" not in mgr.migrations
    locked["t"] = False
    mgr.after_round()
    assert "t" in mgr.migrations
    drive(cluster, mgr, mgr.migrations["t"])
