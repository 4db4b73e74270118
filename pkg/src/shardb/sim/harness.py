"""Deterministic round-driven simulation.

One round = one consensus opportunity in every shard.  The loop routes
workload operations, advances off-chain pipelines (query transfers by
bandwidth/latency, migration bulk streams, notification gossip), commits a
block per shard, and collects metrics.  Everything derives from the seed:
child RNG streams are hashed out of (seed, label), so identical configs
produce byte-identical transcripts.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .. import vso
from ..balancer import Balancer
from ..encoding import enc_bytes, enc_seq, enc_u64, sha256
from ..errors import CapacityExceededError, ConfigError, UnsupportedFeatureError
from ..ledger import Block
from ..migration import MigrationManager
from ..query import (QueryPipeline, StrawmanQuery, make_dml_tx,
                     make_simple_query_tx, subtree_tables)
from ..relational import algebra
from ..runtime import Cluster
from ..wire import KIND_QUERY, QueryPayload, ResultRelation, Transaction
from .config import SimConfig
from .workload import WorkloadGen, make_placement, make_rows, make_schemas


def child_rng(seed: int, label: str) -> random.Random:
    digest = sha256(enc_u64(seed) + label.encode())
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass
class QueryJob:
    sql: str
    submitted: int
    tx: Transaction | None = None
    due: int = 0
    tt_rounds: int = 0
    pg_cost: int = 0
    transfer_bytes: int = 0
    cross: bool = False
    strawman: object = None
    shipments_left: int = 0
    ship_ids: set = field(default_factory=set)
    done: bool = False


class Simulation:
    def __init__(self, config: SimConfig, query_path: str = "delegated",
                 adversary=None):
        config.validate()
        if query_path not in ("delegated", "strawman"):
            raise ConfigError(f"unknown query path {query_path!r}")
        self.config = config
        self.query_path = query_path
        spec = config.workload
        self.schemas = make_schemas(spec.tables)
        self.placement = make_placement(spec.tables, config.shards)
        data_rng = child_rng(config.seed, "genesis")
        self.rows = make_rows(spec, data_rng)
        byz = {sid: set(range(config.byzantine_per_shard))
               for sid in range(config.shards)}
        self.keys = vso.gen_key(config.vso_capacity, config.seed)
        self.cluster = Cluster(
            placement=self.placement, schemas=self.schemas, rows=self.rows,
            shard_count=config.shards, nodes_per_shard=config.nodes_per_shard,
            byzantine=byz, fault_threshold=config.fault_fraction,
            keys=self.keys, pushdown=config.pushdown, use_bloom=config.bloom,
            blob_threshold=config.blob_threshold_bytes, shipment_batch=1,
        )
        self.cluster.adversary = adversary
        self.mgr = MigrationManager(self.cluster, child_rng(config.seed, "drops"),
                                    drop_prob=config.notification_drop)
        self.balancer = Balancer(self.cluster, self.mgr) if config.balancing else None
        self.gen = WorkloadGen(spec, config.shards, child_rng(config.seed, "workload"))
        self.mgr.query_lock = self._table_locked
        self.pending_data: list = []
        self.deferred_queries: list = []
        self.jobs: list[QueryJob] = []
        self.submit_round: dict[bytes, int] = {}
        self.round_records: list[dict] = []
        self.query_records: list[dict] = []
        self.abort_records: list[dict] = []
        self._open_epochs: list[int] = []
        self.adversary_events: list[dict] = []

    def _table_locked(self, table: str) -> bool:
        """Tables referenced by in-flight cross-shard query pipelines hold a
        snapshot; data transactions and migrations on them wait."""
        return table in self._locked_tables()

    def _locked_tables(self) -> set:
        locked = set()
        for job in self.jobs:
            if job.done or not job.cross:
                continue
            if job.tx is not None and job.tx.id in self.submit_round:
                continue  # already in a commit batch
            try:
                stmt = self.cluster.parse(job.sql)
            except Exception:
                continue
            locked.add(stmt.table)
            locked.update(j.table for j in stmt.joins)
        return locked

    # --- round loop ---

    def run(self) -> dict:
        for _ in range(self.config.rounds):
            self.step()
        return self.summary()

    def step(self) -> None:
        cfg = self.config
        rnd = self.cluster.round + 1
        new_epoch = (rnd - 1) // cfg.epoch_length
        if new_epoch > self.cluster.epoch:
            self._open_epochs.append(self.cluster.epoch)
            self.cluster.epoch = new_epoch

        batch: list[Transaction] = []
        batch.extend(self.mgr.pending_txs())
        if self.balancer is not None:
            for epoch in list(self._open_epochs):
                batch.extend(self.balancer.pending_txs(epoch))
                if self.balancer.epoch_settled(epoch):
                    self._open_epochs.remove(epoch)

        deferred, self.deferred_queries = self.deferred_queries, []
        for sql, submitted in deferred:
            self._start_query(sql, rnd, submitted)
        self._emit_workload(rnd, batch)
        for job in self.jobs:
            if not job.done and job.tx is not None and job.due <= rnd \
                    and job.tx.id not in self.submit_round:
                self.submit_round[job.tx.id] = job.submitted
                batch.append(job.tx)
        batch = self._cap_to_blocks(batch)
        heights_before = {sid: s.reference_node().height
                          for sid, s in self.cluster.shards.items()}
        outcomes = self.cluster.commit(batch)
        self._absorb_outcomes(rnd, outcomes)
        self.mgr.after_round()
        self._advance_strawman(rnd)
        self._record_round(rnd, outcomes, heights_before)

    def _emit_workload(self, rnd: int, batch: list) -> None:
        cfg = self.config
        spec = cfg.workload
        gen = self.gen
        for _ in range(spec.txs_per_round):
            if gen.rng.random() < spec.data_fraction:
                stmt = gen.next_data_statement()
                try:
                    tx = make_dml_tx(self.cluster, [stmt], proposer=0)
                except Exception:
                    continue
                self.pending_data.append(tx)
                self.submit_round[tx.id] = rnd
            else:
                sql, _cross = gen.next_query(self.cluster.locations().placement)
                self._start_query(sql, rnd)

    def _start_query(self, sql: str, rnd: int, submitted: int | None = None) -> None:
        cfg = self.config
        job = QueryJob(sql=sql, submitted=submitted if submitted is not None else rnd)
        try:
            stmt = self.cluster.parse(sql)
            tree = algebra.plan(stmt, self.schemas, self.cluster.locations(),
                                pushdown=True)
            cross_ops = algebra.cross_operators(tree)
        except Exception:
            return
        tables = set(subtree_tables(tree))
        for pred in algebra.subqueries(tree):
            tables.update(subtree_tables(pred.subplan))
        if any(not self.mgr.table_servable(t) for t in sorted(tables)):
            self.deferred_queries.append((sql, job.submitted))
            return
        if not cross_ops:
            job.tx = make_simple_query_tx(self.cluster, sql, proposer=0)
            job.cross = len(job.tx.involved) > 1
            job.due = rnd
            self.jobs.append(job)
            return
        job.cross = True
        if self.query_path == "strawman":
            self._start_strawman(job, rnd)
            return
        try:
            pipeline = QueryPipeline(self.cluster, sql)
            tx, _delegates, _anchors = pipeline.run()
        except CapacityExceededError:
            self.abort_records.append({"round": rnd, "reason": "capacity-exceeded",
                                       "sql": sql, "fallback": "strawman"})
            self._start_strawman(job, rnd)
            return
        except UnsupportedFeatureError:
            self._start_strawman(job, rnd)
            return
        job.pg_cost = pipeline.stats["proof_cost"]
        job.transfer_bytes = pipeline.stats["transfer_bytes"]
        job.tt_rounds = (cfg.latency_rounds
                         + -(-job.transfer_bytes // cfg.bandwidth_bytes_per_round))
        job.tx = tx
        job.due = rnd + job.tt_rounds
        self.jobs.append(job)

    def _start_strawman(self, job: QueryJob, rnd: int) -> None:
        try:
            straw = StrawmanQuery(self.cluster, job.sql)
            ships = straw.shipment_txs(proposer=0)
        except Exception:
            return
        job.strawman = straw
        job.shipments_left = len(ships)
        for tx in ships:
            self.pending_data.append(tx)
            self.submit_round[tx.id] = rnd
        job.ship_ids = {t.id for t in ships}
        self.jobs.append(job)

    def _cap_to_blocks(self, priority: list) -> list:
        """Respect the per-shard block size; deferred data txs stay queued."""
        cfg = self.config
        counts = {sid: 0 for sid in self.cluster.shards}
        chosen = []
        for tx in priority:
            if all(counts[s] < cfg.block_size for s in tx.involved):
                chosen.append(tx)
                for s in tx.involved:
                    counts[s] += 1
        locked = self._locked_tables()
        dual_used: set = set()
        leftovers = []
        for tx in self.pending_data:
            held = False
            table = None
            if tx.kind == "data" and hasattr(tx.payload, "statements"):
                targets = {self.cluster.parse(t).table for t in tx.payload.statements}
                table = next(iter(targets)) if targets else None
                held = bool(targets & locked)
                # dual-mode tables take one sequenced data tx per round
                if not held and table in self.mgr.migrations and table in dual_used:
                    held = True
            if not held and all(counts[s] < cfg.block_size for s in tx.involved):
                seq_tx = self.mgr.prepare_data_tx(tx)
                if seq_tx is not tx:
                    self.submit_round[seq_tx.id] = self.submit_round.pop(tx.id, self.cluster.round + 1)
                    dual_used.add(table)
                chosen.append(seq_tx)
                for s in seq_tx.involved:
                    counts[s] += 1
            else:
                leftovers.append(tx)
        self.pending_data = leftovers
        return chosen

    def _absorb_outcomes(self, rnd: int, outcomes: dict) -> None:
        for job in self.jobs:
            if job.done:
                continue
            if job.strawman is not None and job.shipments_left:
                remaining = set()
                for tid in job.ship_ids:
                    if tid in outcomes:
                        ok, _ = outcomes[tid]
                        if not ok:
                            job.done = True  # shipment aborted; drop the query
                        continue
                    remaining.add(tid)
                job.ship_ids = remaining
                job.shipments_left = len(remaining)
                continue
            if job.tx is not None and job.tx.id in outcomes:
                ok, reason = outcomes[job.tx.id]
                commit_round = rnd + self.config.confirmation_depth - 1
                if ok:
                    self.query_records.append({
                        "sql": job.sql, "cross": job.cross,
                        "strawman": job.strawman is not None,
                        "submitted": job.submitted, "committed": commit_round,
                        "cl_rounds": commit_round - job.submitted - job.tt_rounds,
                        "tt_rounds": job.tt_rounds, "pg_cost": job.pg_cost,
                        "transfer_bytes": job.transfer_bytes,
                    })
                else:
                    self.abort_records.append({"round": rnd, "reason": reason,
                                               "sql": job.sql})
                job.done = True

    def _advance_strawman(self, rnd: int) -> None:
        for job in self.jobs:
            if job.done or job.strawman is None or job.tx is not None:
                continue
            if job.shipments_left == 0:
                try:
                    job.tx = job.strawman.query_tx(proposer=0)
                except Exception:
                    job.done = True
                    continue
                job.due = rnd + 1

    def _record_round(self, rnd: int, outcomes: dict, heights_before: dict) -> None:
        committed = [tid for tid, (ok, _) in outcomes.items() if ok]
        aborted = [tid for tid, (ok, _) in outcomes.items() if not ok]
        onchain = 0
        per_shard = {}
        for sid, shard in self.cluster.shards.items():
            node = shard.reference_node()
            for block in node.chain[heights_before[sid]:]:
                per_shard[sid] = per_shard.get(sid, 0) + len(block.txs)
                onchain += sum(t.byte_size() for t in block.txs)
        latencies = [rnd - self.submit_round[tid] + self.config.confirmation_depth - 1
                     for tid in committed if tid in self.submit_round]
        self.round_records.append({
            "round": rnd, "epoch": self.cluster.epoch,
            "committed": len(committed), "aborted": len(aborted),
            "onchain_bytes": onchain, "per_shard": per_shard,
            "latency_sum": sum(latencies), "latency_n": len(latencies),
            "queue_depth": len(self.pending_data),
        })

    # --- outputs ---

    def summary(self) -> dict:
        total_committed = sum(r["committed"] for r in self.round_records)
        lat_sum = sum(r["latency_sum"] for r in self.round_records)
        lat_n = sum(r["latency_n"] for r in self.round_records)
        per_shard_committed: dict[int, int] = {}
        for rec in self.round_records:
            for sid, n in rec["per_shard"].items():
                per_shard_committed[sid] = per_shard_committed.get(sid, 0) + n
        digests = {}
        for sid in sorted(self.cluster.shards):
            node = self.cluster.node_of_shard(sid)
            digests[str(sid)] = node.state_digest().hex()
        table_digests = []
        for name in sorted(self.schemas):
            holder = None
            for sid in sorted(self.cluster.shards):
                cand = self.cluster.node_of_shard(sid)
                if name in cand.tables:
                    holder = cand.tables[name]
                    break
            table_digests.append(holder.state_digest(1 << 62))
        replay_digest = sha256(enc_seq(table_digests)).hex()
        cross_done = [q for q in self.query_records if q["cross"]]
        return {
            "rounds": self.config.rounds,
            "committed_txs": total_committed,
            "throughput_per_round": total_committed / max(1, self.config.rounds),
            "mean_latency_rounds": (lat_sum / lat_n) if lat_n else 0.0,
            "committed_queries": len(self.query_records),
            "committed_cross_queries": len(cross_done),
            "aborts": len(self.abort_records),
            "per_shard_committed": per_shard_committed,
            "offchain_transfer_bytes": sum(b for _, _, b in self.cluster.transfers),
            "onchain_bytes": sum(r["onchain_bytes"] for r in self.round_records),
            "store_digests": digests,
            "replay_digest": replay_digest,
            "transcript_digest": self.transcript_digest().hex(),
            "emitted_queries": self.gen.emitted_queries,
            "emitted_cross_queries": self.gen.emitted_cross,
        }

    def chain_bytes(self) -> bytes:
        parts = []
        for sid in sorted(self.cluster.shards):
            node = self.cluster.node_of_shard(sid)
            parts.append(enc_u64(sid)
                         + enc_seq(enc_bytes(b.to_bytes()) for b in node.chain))
        return enc_seq(parts)

    def events_bytes(self) -> bytes:
        return "\n".join(json.dumps(e, sort_keys=True)
                         for e in self.cluster.events).encode()

    def transcript_digest(self) -> bytes:
        return sha256(enc_bytes(self.chain_bytes()) + enc_bytes(self.events_bytes()))

    def write_transcript(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "chain.bin").write_bytes(self.chain_bytes())
        with open(out / "events.jsonl", "w") as fh:
            for e in self.cluster.events:
                fh.write(json.dumps(e, sort_keys=True) + "\n")
        from dataclasses import asdict
        cfg = asdict(self.config)
        (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
        (out / "summary.json").write_text(
            json.dumps(self.summary(), indent=2, sort_keys=True))
        return out
