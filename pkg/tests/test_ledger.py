from fractions import Fraction

import pytest

from shardb import vso
from shardb.errors import InternalInvariantError
from shardb.ledger import ShardConfig
from shardb.merkle import check_header_chain
from shardb.query import make_dml_tx, make_simple_query_tx
from shardb.relational.schema import Schema
from shardb.runtime import Cluster
from shardb.wire import DmlPayload, QueryPayload, ResultRelation, Transaction

KEYS = vso.gen_key(128, seed=21)


def small_cluster(**kw):
    schemas = {"t": Schema("t", (("id", "int"), ("v", "int")), ("id",)),
               "u": Schema("u", (("id", "int"), ("v", "int")), ("id",))}
    rows = {"t": [(1, 10), (2, 20)], "u": [(7, 70)]}
    kw.setdefault("keys", KEYS)
    return Cluster(placement={"t": 0, "u": 1}, schemas=schemas, rows=rows,
                   shard_count=2, **kw)


def test_quorum_thresholds():
    cfg = ShardConfig(0, [0, 1, 2, 3], set(), Fraction(1, 3))
    assert cfg.quorum == 3
    cfg2 = ShardConfig(0, [0, 1, 2, 3], set(), Fraction(1, 2))
    assert cfg2.quorum == 2
    assert not cfg.assumption_violated()
    assert ShardConfig(0, [0, 1, 2, 3], {0, 1}, Fraction(1, 3)).assumption_violated()


def test_valid_data_tx_commits_on_all_honest_nodes():
    cluster = small_cluster(byzantine={0: {3}})
    tx = make_dml_tx(cluster, ["INSERT INTO t VALUES (3, 30)"], proposer=0)
    ok, reason = cluster.commit_one(tx)
    assert ok, reason
    digests = set(cluster.honest_state_digests(0))
    assert len(digests) == 1
    # byzantine node keeps state too (its misbehavior is in votes)
    for node in cluster.shards[0].nodes:
        assert any(r.values == (3, 30) for r in node.tables["t"].rows)


def test_invalid_tx_excluded_by_honest_validators():
    cluster = small_cluster(byzantine={0: {3}})
    bad = make_dml_tx(cluster, ["INSERT INTO t VALUES (1, 99)"], proposer=3)  # pk dup
    ok, reason = cluster.commit_one(bad)
    assert not ok and "wrong-result" in reason
    assert all(len(n.tables["t"].rows) == 2 for n in cluster.shards[0].nodes)


def test_assumption_violation_flagged():
    cluster = small_cluster(byzantine={0: {1, 2}})  # 2/4 > 1/3
    flagged = [e for e in cluster.events if e["event"] == "assumption-violated"]
    assert flagged and flagged[0]["shard"] == 0


def test_chain_and_header_integrity():
    cluster = small_cluster()
    for i in range(5):
        tx = make_dml_tx(cluster, [f"INSERT INTO t VALUES ({10 + i}, 0)"], proposer=0)
        assert cluster.commit_one(tx)[0]
    node = cluster.node_of_shard(0)
    headers = [b.header for b in node.chain]
    assert check_header_chain(headers)
    assert [h.height for h in headers] == [1, 2, 3, 4, 5]
    # light clients of the other shard observed every header
    other = cluster.node_of_shard(1)
    assert [h.digest() for h in other.headers[0]] == [h.digest() for h in headers]


def test_cross_shard_atomic_commit_and_abort():
    cluster = small_cluster()
    good = make_dml_tx(cluster, ["INSERT INTO t VALUES (5, 1)",
                                 "INSERT INTO u VALUES (6, 1)"], proposer=0)
    ok, reason = cluster.commit_one(good)
    assert ok, reason
    h0 = cluster.node_of_shard(0).height
    h1 = cluster.node_of_shard(1).height
    assert h0 == 1 and h1 == 1

    bad = make_dml_tx(cluster, ["INSERT INTO t VALUES (9, 1)",
                                "INSERT INTO u VALUES (7, 1)"], proposer=0)  # u pk dup
    ok, reason = cluster.commit_one(bad)
    assert not ok
    # neither shard advanced: committed in all or none
    assert cluster.node_of_shard(0).height == h0
    assert cluster.node_of_shard(1).height == h1


def test_spv_acceptance_of_cross_shard_commit():
    cluster = small_cluster()
    tx = make_dml_tx(cluster, ["INSERT INTO t VALUES (5, 1)",
                               "INSERT INTO u VALUES (6, 1)"], proposer=0)
    assert cluster.commit_one(tx)[0]
    proofs = cluster.spv_proofs(tx)
    from shardb.merkle import spv_check
    ok, reason = spv_check(tx.id, cluster.client_headers(), proofs, {0, 1})
    assert ok, reason


def test_byzantine_adversary_vote_hook():
    class YesManAdversary:
        def vote(self, shard, node, tx, honest_ok):
            return True  # votes for everything, including invalid txs

    cluster = small_cluster(byzantine={0: {3}})
    cluster.adversary = YesManAdversary()
    bad = make_dml_tx(cluster, ["INSERT INTO t VALUES (1, 99)"], proposer=3)
    ok, _ = cluster.commit_one(bad)
    assert not ok  # 1 byz yes + 3 honest no < quorum 3


def test_transaction_wire_roundtrip():
    from shardb.encoding import Reader
    cluster = small_cluster()
    tx = make_dml_tx(cluster, ["INSERT INTO t VALUES (5, 1)"], proposer=2)
    back = Transaction.from_reader(Reader(tx.to_bytes()))
    assert back.id == tx.id
    assert back.payload.statements == tx.payload.statements

    qtx = make_simple_query_tx(cluster, "SELECT id FROM t WHERE v >= 10", proposer=0)
    back = Transaction.from_reader(Reader(qtx.to_bytes()))
    assert back.id == qtx.id
    assert back.payload.final_values == qtx.payload.final_values

    seq = tx.with_dual_seq(4)
    back = Transaction.from_reader(Reader(seq.to_bytes()))
    assert back.dual_seq == 4 and back.id != tx.id


def test_query_tx_validates_and_replicates():
    cluster = small_cluster()
    qtx = make_simple_query_tx(cluster, "SELECT id FROM t", proposer=0)
    ok, reason = cluster.commit_one(qtx)
    assert ok, reason
    # a query with a wrong result is rejected
    payload = qtx.payload
    bad_payload = QueryPayload(payload.sql, payload.anchors, (),
                               ResultRelation((), (), ()),
                               payload.final_values + ((123,),))
    bad = Transaction(qtx.kind, qtx.involved, bad_payload, 0, cluster.next_nonce())
    ok, reason = cluster.commit_one(bad)
    assert not ok and "wrong-result" in reason
    cluster.assert_replication()
