import random

import pytest

from shardb import vso
from shardb.bloom import BloomFilter
from shardb.errors import UnsupportedFeatureError
from shardb.query import (ElementRegistry, QueryPipeline, StrawmanQuery,
                          column_element, make_dml_tx, make_simple_query_tx,
                          select_delegates)
from shardb.relational.schema import Schema
from shardb.runtime import Cluster
from shardb.wire import OpBundle, QueryPayload, ResultRelation, ResultRow, Transaction

from oracle import oracle_select, sorted_values

KEYS = vso.gen_key(512, seed=13)


def fig3_cluster(**kw):
    schemas = {
        "t1": Schema("t1", (("oid", "int"), ("num", "int"))),
        "t2": Schema("t2", (("oid", "int"), ("num", "int"))),
    }
    rows = {"t1": [(5, 1), (7, 1), (5, 1)],
            "t2": [(5, 1), (9, 1), (10, 1)]}
    return Cluster(placement={"t1": 0, "t2": 1}, schemas=schemas, rows=rows,
                   keys=KEYS, **kw)


FIG3_SQL = ("SELECT * FROM t1 JOIN t2 ON t1.oid = t2.oid "
            "WHERE t1.num = 1 AND t2.num = 1")


def random_cluster(rng, shards=3, tables=6, rows=25, **kw):
    schemas, data = {}, {}
    for i in range(tables):
        name = f"t{i}"
        schemas[name] = Schema(name, (
            ("id", "int"), ("k", "int"), ("num", "int"),
            ("val", "decimal"), ("tag", "string")), ("id",))
        data[name] = [
            (rid, rng.randint(0, 8), rng.randint(0, 3),
             rng.randint(-100, 100), rng.choice("abc"))
            for rid in range(rng.randint(0, rows))
        ]
    placement = {f"t{i}": i % shards for i in range(tables)}
    kw.setdefault("keys", KEYS)
    return Cluster(placement=placement, schemas=schemas, rows=data,
                   shard_count=shards, **kw)


def run_and_accept(cluster, sql):
    pipe = QueryPipeline(cluster, sql)
    tx, delegates, anchors = pipe.run()
    ok, reason = cluster.commit_one(tx)
    assert ok, reason
    ok, reason, values = cluster.client_accept_query(tx)
    assert ok, reason
    return values, tx, pipe


# --- delegates ---

def test_select_delegates_round_robin():
    cluster = fig3_cluster()
    d0 = select_delegates([0, 1], 0, cluster.shards, view=0)
    assert d0.main_node == 0 and d0.sub_nodes == {1: 4}
    d1 = select_delegates([0, 1], 0, cluster.shards, view=1)
    assert d1.main_node == 1 and d1.sub_nodes == {1: 5}


# --- end-to-end honest paths ---

def test_fig3_end_to_end_bitmaps_and_result():
    cluster = fig3_cluster()
    values, tx, pipe = run_and_accept(cluster, FIG3_SQL)
    assert sorted_values(values) == sorted_values([(5, 1, 5, 1), (5, 1, 5, 1)])
    assert len(tx.payload.bundles) == 1
    bundle = tx.payload.bundles[0]
    assert bundle.sides[0].bitmap == (1, 0, 1)
    assert bundle.sides[1].bitmap == (1, 0, 0)
    cluster.assert_replication()


def test_proof_count_matches_cross_operators(rng):
    # chain of joins across three shards: two cross operators
    cluster = random_cluster(rng, shards=3, tables=3, rows=12)
    sql = ("SELECT t0.id FROM t0 JOIN t1 ON t0.k = t1.k "
           "JOIN t2 ON t0.k = t2.k")
    values, tx, pipe = run_and_accept(cluster, sql)
    assert len(tx.payload.bundles) == 2
    schemas = {n: t.schema for n, t in cluster.node_of_shard(0).tables.items()}
    all_schemas = cluster.schemas
    stores = {}
    for sid in cluster.shards:
        stores.update(cluster.node_of_shard(sid).tables)
    want = oracle_select(cluster.parse(sql), all_schemas, stores, 0)
    assert sorted_values(values) == sorted_values(want)


def test_cross_union_query(rng):
    cluster = random_cluster(rng, shards=2, tables=2, rows=10)
    sql = "SELECT k FROM t0 WHERE num = 1 UNION SELECT k FROM t1 WHERE num = 1"
    values, tx, _ = run_and_accept(cluster, sql)
    stores = {}
    for sid in cluster.shards:
        stores.update(cluster.node_of_shard(sid).tables)
    want = oracle_select(cluster.parse(sql), cluster.schemas, stores, 0)
    assert sorted_values(values) == sorted_values(want)
    assert tx.payload.bundles[0].kind == "union"


def test_aggregate_over_cross_join(rng):
    cluster = random_cluster(rng, shards=2, tables=2, rows=15)
    sql = "SELECT SUM(t0.val), COUNT(*) FROM t0 JOIN t1 ON t0.k = t1.k"
    values, tx, _ = run_and_accept(cluster, sql)
    stores = {}
    for sid in cluster.shards:
        stores.update(cluster.node_of_shard(sid).tables)
    want = oracle_select(cluster.parse(sql), cluster.schemas, stores, 0)
    assert values == want


def test_delegated_equals_strawman_and_oracle(rng):
    for trial in range(25):
        cluster = random_cluster(rng, shards=rng.randint(2, 4))
        placement = cluster.locations().placement
        # pick two tables in different shards
        by_shard = {}
        for t, s in placement.items():
            by_shard.setdefault(s, []).append(t)
        shards = [s for s, ts in by_shard.items() if ts]
        if len(shards) < 2:
            continue
        ta = by_shard[shards[0]][0]
        tb = by_shard[shards[1]][0]
        sql = (f"SELECT {ta}.id, {tb}.id FROM {ta} JOIN {tb} "
               f"ON {ta}.k = {tb}.k WHERE {ta}.num <= 2")
        values, tx, _ = run_and_accept(cluster, sql)

        stores = {}
        for sid in cluster.shards:
            stores.update({n: t for n, t in cluster.node_of_shard(sid).tables.items()})
        want = oracle_select(cluster.parse(sql), cluster.schemas, stores, 0)
        assert sorted_values(values) == sorted_values(want), sql

        straw = StrawmanQuery(cluster, sql)
        ships = straw.shipment_txs(proposer=0)
        for s in ships:
            ok, reason = cluster.commit_one(s)
            assert ok, reason
        qtx = straw.query_tx(proposer=0)
        ok, reason = cluster.commit_one(qtx)
        assert ok, reason
        ok, _, straw_values = cluster.client_accept_query(qtx)
        assert ok
        assert sorted_values(straw_values) == sorted_values(values)


def test_strawman_tx_counts():
    cluster = fig3_cluster()
    straw = StrawmanQuery(cluster, FIG3_SQL)
    ships = straw.shipment_txs(proposer=0)
    assert len(ships) == 3  # one data tx per foreign row
    for s in ships:
        assert set(s.involved) == {0, 1}
        assert cluster.commit_one(s)[0]
    # the final query tx involves all related shards: sub shards attest
    # their shipped (possibly empty) table copies during validation
    qtx = straw.query_tx(proposer=0)
    assert set(qtx.involved) == {0, 1}
    assert cluster.commit_one(qtx)[0]

    # empty sub table: zero data txs, one query tx
    schemas = {"a": Schema("a", (("k", "int"),)), "b": Schema("b", (("k", "int"),))}
    cluster2 = Cluster(placement={"a": 0, "b": 1}, schemas=schemas,
                       rows={"a": [(1,)], "b": []}, keys=KEYS)
    straw2 = StrawmanQuery(cluster2, "SELECT * FROM a JOIN b ON a.k = b.k")
    assert straw2.shipment_txs(proposer=0) == []
    assert cluster2.commit_one(straw2.query_tx(proposer=0))[0]


# --- optimization toggles ---

def test_optimization_transparency_and_transfer_monotonicity(rng):
    for trial in range(10):
        seed = rng.randrange(10**9)
        results = {}
        bytes_used = {}
        for pd, bf in [(True, True), (False, False), (True, False)]:
            local = random.Random(seed)
            cluster = random_cluster(local, shards=2, tables=2, rows=20,
                                     pushdown=pd, use_bloom=bf)
            sql = ("SELECT t0.id, t1.id FROM t0 JOIN t1 ON t0.k = t1.k "
                   "WHERE t0.num = 1 AND t1.num <= 2")
            pipe = QueryPipeline(cluster, sql)
            tx, _, _ = pipe.run()
            ok, reason = cluster.commit_one(tx)
            assert ok, reason
            results[(pd, bf)] = sorted_values(
                [tuple(v) for v in tx.payload.final_values])
            bytes_used[(pd, bf)] = pipe.stats["transfer_bytes"]
        assert results[(True, True)] == results[(False, False)] == results[(True, False)]
        assert bytes_used[(True, True)] <= bytes_used[(True, False)]
        assert bytes_used[(True, False)] <= bytes_used[(False, False)]


def test_bloom_no_false_negatives(rng):
    for _ in range(30):
        members = rng.sample(range(10**9), rng.randint(1, 200))
        bf = BloomFilter.from_elements(members)
        assert all(m in bf for m in members)


def test_capacity_overflow_raises():
    small = vso.gen_key(4, seed=1)
    rng = random.Random(0)
    cluster = random_cluster(rng, shards=2, tables=2, rows=20, keys=small)
    pipe = QueryPipeline(cluster, "SELECT t0.id FROM t0 JOIN t1 ON t0.k = t1.k")
    from shardb.errors import CapacityExceededError
    with pytest.raises(CapacityExceededError):
        pipe.run()


def test_residual_cross_predicate_refused(rng):
    cluster = random_cluster(rng, shards=2, tables=2, rows=6)
    pipe = QueryPipeline(cluster, "SELECT t0.id FROM t0 JOIN t1 ON t0.k = t1.k "
                                  "WHERE t0.num = t1.num")
    with pytest.raises(UnsupportedFeatureError):
        pipe.run()


# --- adversarial behaviors (Definition-1 game at module scale) ---

def _committed_or_accepted(cluster, tx):
    ok, _ = cluster.commit_one(tx)
    if not ok:
        return False
    ok, _, _ = cluster.client_accept_query(tx)
    return ok


def _tamper_payload(rng, cluster, payload: QueryPayload):
    """Yield (label, tampered payload) covering the adversary classes."""
    from shardb.encoding import Reader
    base = payload.base
    if not isinstance(base, ResultRelation):
        base = ResultRelation.from_reader(Reader(cluster.blob_get(base)))
    rows = list(base.rows)

    if rows:
        dropped = cluster.maybe_blob(
            ResultRelation(base.columns, base.types, tuple(rows[1:])))
        finals = tuple(r.values for r in rows[1:])
        yield "drop-row", QueryPayload(payload.sql, payload.anchors, payload.bundles,
                                       dropped, finals, payload.sub_results)
        fake = rows[0]
        mutated = ResultRow(tuple(v + 1 if isinstance(v, int) else v
                                  for v in fake.values), fake.refs, fake.join_elems)
        forged = cluster.maybe_blob(ResultRelation(
            base.columns, base.types,
            tuple(sorted([mutated] + rows[1:], key=lambda r: r.to_bytes()))))
        finals = tuple(tuple(r) for r in sorted(
            [mutated.values] + [r.values for r in rows[1:]]))
        yield "add-row", QueryPayload(payload.sql, payload.anchors, payload.bundles,
                                      forged, finals, payload.sub_results)
    if payload.bundles:
        b = payload.bundles[0]
        stale_acc = vso.setup([1, 2, 3], cluster.keys)
        side0 = b.sides[0]
        from shardb.wire import SideInfo
        stale_side = SideInfo(side0.origin, side0.table, side0.shard,
                              side0.op_ref, stale_acc, side0.bitmap)
        yield "stale-acc", QueryPayload(
            payload.sql, payload.anchors,
            (OpBundle(b.op_id, b.kind, (stale_side, b.sides[1]), b.proof),)
            + payload.bundles[1:],
            payload.base, payload.final_values, payload.sub_results)

        from shardb import pairing
        bogus = pairing.scalar_mult(rng.randrange(2, 1 << 30), pairing.G)
        forged_proof = vso.SetOpProof(
            b.proof.op, [bogus] * len(b.proof.subset_witnesses),
            list(b.proof.completeness_witnesses), list(b.proof.result))
        yield "forge-proof", QueryPayload(
            payload.sql, payload.anchors,
            (OpBundle(b.op_id, b.kind, b.sides, forged_proof),) + payload.bundles[1:],
            payload.base, payload.final_values, payload.sub_results)

        if any(side0.bitmap):
            flipped = tuple(1 - bit for bit in side0.bitmap)
            bad_side = SideInfo(side0.origin, side0.table, side0.shard,
                                side0.op_ref, side0.acc, flipped)
            yield "forge-bitmap", QueryPayload(
                payload.sql, payload.anchors,
                (OpBundle(b.op_id, b.kind, (bad_side, b.sides[1]), b.proof),)
                + payload.bundles[1:],
                payload.base, payload.final_values, payload.sub_results)


def test_adversarial_payloads_never_accepted(rng):
    rejected = {}
    for trial in range(12):
        cluster = random_cluster(rng, shards=2, tables=2, rows=15)
        sql = ("SELECT t0.id, t1.id FROM t0 JOIN t1 ON t0.k = t1.k "
               "WHERE t0.num <= 2")
        pipe = QueryPipeline(cluster, sql)
        tx, _, _ = pipe.run()
        for label, bad_payload in _tamper_payload(rng, cluster, tx.payload):
            bad_tx = Transaction(tx.kind, tx.involved, bad_payload,
                                 tx.proposer, cluster.next_nonce())
            assert not _committed_or_accepted(cluster, bad_tx), (label, trial)
            rejected[label] = True
        # the honest transaction still commits and is accepted
        ok, reason = cluster.commit_one(tx)
        assert ok, reason
        ok, _, _ = cluster.client_accept_query(tx)
        assert ok
    assert set(rejected) >= {"drop-row", "add-row", "stale-acc", "forge-proof",
                             "forge-bitmap"}


def test_inconsistent_copies_detected_by_spv(rng):
    cluster = random_cluster(rng, shards=2, tables=2, rows=10)
    sql = "SELECT t0.id, t1.id FROM t0 JOIN t1 ON t0.k = t1.k"
    tx, _, _ = QueryPipeline(cluster, sql).run()
    ok, _ = cluster.commit_one(tx)
    assert ok
    proofs = cluster.spv_proofs(tx)
    # a different payload digest bound at shard 1
    other = Transaction(tx.kind, tx.involved, tx.payload, tx.proposer,
                        cluster.next_nonce())
    forged = dict(proofs)
    forged[1] = type(proofs[1])(1, proofs[1].height, other.id, proofs[1].proof)
    ok, reason, _ = cluster.client_accept_query(tx, forged)
    assert not ok and "inconsistent-copies" in reason
    # missing shard proof
    ok, reason, _ = cluster.client_accept_query(tx, {0: proofs[0]})
    assert not ok and "incomplete" in reason


def test_stale_snapshot_after_concurrent_write(rng):
    cluster = random_cluster(rng, shards=2, tables=2, rows=10)
    sql = "SELECT t0.id, t1.id FROM t0 JOIN t1 ON t0.k = t1.k"
    tx, _, _ = QueryPipeline(cluster, sql).run()
    # a write to t0 commits before the query transaction does
    write = make_dml_tx(cluster, ["INSERT INTO t0 VALUES (999, 1, 1, 0, 'z')"],
                        proposer=0)
    assert cluster.commit_one(write)[0]
    ok, reason = cluster.commit_one(tx)
    assert not ok and "stale-snapshot" in reason


# --- cross-shard DML ---

def test_cross_shard_delete_with_subquery(rng):
    cluster = random_cluster(rng, shards=2, tables=2, rows=20)
    node0 = cluster.node_of_shard(0)
    sql = "DELETE FROM t0 WHERE k IN (SELECT k FROM t1 WHERE num = 1)"
    # oracle: expected surviving ids
    stores = {}
    for sid in cluster.shards:
        stores.update(cluster.node_of_shard(sid).tables)
    sub = oracle_select(cluster.parse("SELECT k FROM t1 WHERE num = 1"),
                        cluster.schemas, stores, 0)
    doomed = {r.values[0] for _, r in stores["t0"].snapshot(0)
              if (r.values[1],) in [tuple(v) for v in sub] or r.values[1] in
              {v[0] for v in sub}}
    tx = make_dml_tx(cluster, [sql], proposer=0)
    assert set(tx.involved) == {0, 1}
    ok, reason = cluster.commit_one(tx)
    assert ok, reason
    survivors = {r.values[0] for _, r in node0.tables["t0"].snapshot(node0.height)}
    assert survivors.isdisjoint(doomed)
    cluster.assert_replication()


def test_multi_shard_batch_atomicity(rng):
    cluster = random_cluster(rng, shards=2, tables=2, rows=5)
    batch = ["INSERT INTO t0 VALUES (501, 1, 1, 0, 'x')",
             "INSERT INTO t1 VALUES (502, 1, 1, 0, 'y')"]
    tx = make_dml_tx(cluster, batch, proposer=0)
    assert set(tx.involved) == {0, 1}
    ok, reason = cluster.commit_one(tx)
    assert ok, reason
    n0 = cluster.node_of_shard(0)
    n1 = cluster.node_of_shard(1)
    assert any(r.values[0] == 501 for _, r in n0.tables["t0"].snapshot(n0.height))
    assert any(r.values[0] == 502 for _, r in n1.tables["t1"].snapshot(n1.height))

    # a batch with a key violation in one shard aborts in both
    bad = ["INSERT INTO t0 VALUES (601, 1, 1, 0, 'x')",
           "INSERT INTO t1 VALUES (502, 1, 1, 0, 'y')"]  # duplicate pk in t1
    tx2 = make_dml_tx(cluster, bad, proposer=0)
    ok, reason = cluster.commit_one(tx2)
    assert not ok
    assert not any(r.values[0] == 601
                   for _, r in n0.tables["t0"].snapshot(n0.height))


def test_tampered_subquery_certificate_aborts(rng):
    cluster = random_cluster(rng, shards=2, tables=2, rows=20)
    sql = "DELETE FROM t0 WHERE k IN (SELECT k FROM t1 WHERE num = 1)"
    tx = make_dml_tx(cluster, [sql], proposer=0)
    cert = tx.payload.subquery
    forged_values = cert.final_values + ((99999,),)
    from shardb.wire import DmlPayload
    bad_cert = QueryPayload(cert.sql, cert.anchors, cert.bundles, cert.base,
                            forged_values, cert.sub_results)
    bad_tx = Transaction(tx.kind, tx.involved, DmlPayload(tx.payload.statements,
                                                          bad_cert),
                         tx.proposer, cluster.next_nonce())
    ok, reason = cluster.commit_one(bad_tx)
    assert not ok and ("wrong-result" in reason or "mismatch" in reason)
    ok, reason = cluster.commit_one(tx)
    assert ok, reason


def test_simple_query_with_foreign_subquery(rng):
    cluster = random_cluster(rng, shards=2, tables=3, rows=15)
    # t0 and t2 share shard 0; t1 on shard 1 provides the subquery
    sql = "SELECT id FROM t0 WHERE num IN (SELECT MIN(num) FROM t1)"
    tx = make_simple_query_tx(cluster, sql, proposer=0)
    assert set(tx.involved) == {0, 1}
    ok, reason = cluster.commit_one(tx)
    assert ok, reason
    ok, _, values = cluster.client_accept_query(tx)
    assert ok
    stores = {}
    for sid in cluster.shards:
        stores.update(cluster.node_of_shard(sid).tables)
    want = oracle_select(cluster.parse(sql), cluster.schemas, stores, 0)
    assert sorted_values(values) == sorted_values(want)


def test_element_registry_detects_collisions():
    registry = ElementRegistry()
    e = column_element("int", 5, registry)
    assert column_element("int", 5, registry) == e
    from shardb.errors import InternalInvariantError
    with pytest.raises(InternalInvariantError):
        registry.check(e, b"different-canonical-bytes")
