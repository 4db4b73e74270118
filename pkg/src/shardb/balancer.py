"""Demand metering, greedy planning, and epoch-based balancing execution.

Per epoch: every shard's leader reports per-table transaction counts over
the closed epoch in a control tx to the round-robin reference shard; the
reference shard publishes a planning strategy (a global control tx) built
by one greedy pass: walk tables hottest-first and, whenever the holder's
running load exceeds the per-shard average, move the table to the
currently least-loaded shard (loads update as moves are planned, one move
per table).  Both the demand counts and the pass are deterministic, so any
node rejects a report or plan that does not recompute exactly.  Committed
moves are then executed by live migrations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InternalInvariantError
from .wire import (KIND_CONTROL, KIND_DATA, KIND_QUERY, DemandReport,
                   DmlPayload, PlanningStrategy, QueryPayload,
                   ShipmentPayload, Transaction)


def tables_of_tx(cluster, tx: Transaction) -> list:
    """Tables a transaction targets, for demand accounting."""
    if tx.kind == KIND_DATA and isinstance(tx.payload, DmlPayload):
        return sorted({cluster.parse(t).table for t in tx.payload.statements})
    if tx.kind == KIND_QUERY and isinstance(tx.payload, QueryPayload):
        stmt = cluster.parse(tx.payload.sql)
        tables = {stmt.table} | {j.table for j in stmt.joins}
        u = stmt.union
        while u is not None:
            tables |= {u.table} | {j.table for j in u.joins}
            u = u.union
        return sorted(tables)
    return []


def compute_demand(cluster, node, epoch: int) -> dict:
    """Per-table committed tx counts over the epoch, for tables this node's
    shard owned when the txs committed; recomputable from the chain alone."""
    counts: dict[str, int] = {}
    for block in node.chain:
        if block.header.epoch != epoch:
            continue
        for tx in block.txs:
            for table in tables_of_tx(cluster, tx):
                counts[table] = counts.get(table, 0) + 1
    return counts


def greedy_plan(demands: dict, placement: dict, shard_count: int):
    """One greedy pass as specified; returns (moves, resulting placement).

    Integer arithmetic throughout: "load exceeds the average" is
    load * shard_count > total demand.
    """
    loads = {s: 0 for s in range(shard_count)}
    place = dict(placement)
    for t, s in place.items():
        loads[s] += demands.get(t, 0)
    total = sum(demands.get(t, 0) for t in place)
    order = sorted(place, key=lambda t: (-demands.get(t, 0), t))
    moves = []
    for t in order:
        holder = place[t]
        if loads[holder] * shard_count > total:
            dest = min(loads, key=lambda s: (loads[s], s))
            if dest != holder:
                d = demands.get(t, 0)
                loads[holder] -= d
                loads[dest] += d
                place[t] = dest
                moves.append((t, holder, dest))
    return moves, place


def reference_shard(epoch: int, shard_count: int) -> int:
    return epoch % shard_count


class Balancer:
    """Wires demand reporting and plan publication into a cluster; executes
    committed moves through the migration manager."""

    def __init__(self, cluster, migration_manager):
        self.cluster = cluster
        self.mgr = migration_manager
        self.reports: dict[int, dict[int, dict]] = {}   # epoch -> shard -> demands
        self.plans: dict[int, PlanningStrategy] = {}
        self.log: list = []
        self._phase: dict[int, str] = {}  # epoch -> reports|plan|done
        migration_manager.fallback_validator = self.validate_control
        cluster.on_commit.append(self.observe_block)

    # --- per-epoch driver (called by the harness after an epoch closes) ---

    def pending_txs(self, closed_epoch: int) -> list:
        phase = self._phase.get(closed_epoch, "reports")
        cluster = self.cluster
        if phase == "reports":
            txs = []
            ref = reference_shard(closed_epoch, len(cluster.shards))
            for sid in sorted(cluster.shards):
                if self.reports.get(closed_epoch, {}).get(sid) is not None:
                    continue
                node = cluster.node_of_shard(sid)
                demands = compute_demand(cluster, node, closed_epoch)
                payload = DemandReport(closed_epoch, sid,
                                       tuple(sorted(demands.items())))
                txs.append(Transaction(
                    KIND_CONTROL, tuple(sorted({sid, ref})), payload,
                    proposer=cluster.shards[sid].nodes[0].node_id,
                    nonce=cluster.next_nonce()))
            return txs
        if phase == "plan":
            ref = reference_shard(closed_epoch, len(cluster.shards))
            demands = self.merged_demands(closed_epoch)
            moves, place = greedy_plan(demands, cluster.locations().placement,
                                       len(cluster.shards))
            payload = PlanningStrategy(closed_epoch, tuple(moves),
                                       tuple(sorted(place.items())))
            return [Transaction(
                KIND_CONTROL, tuple(sorted(cluster.shards)), payload,
                proposer=cluster.shards[ref].nodes[0].node_id,
                nonce=cluster.next_nonce())]
        return []

    def merged_demands(self, epoch: int) -> dict:
        merged: dict[str, int] = {}
        for sid, demands in sorted(self.reports.get(epoch, {}).items()):
            for t, c in demands.items():
                merged[t] = merged.get(t, 0) + c
        return merged

    def epoch_settled(self, epoch: int) -> bool:
        return self._phase.get(epoch) == "done"

    # --- commit observation ---

    def observe_block(self, block, shard_id: int) -> None:
        for tx in block.txs:
            if tx.kind != KIND_CONTROL:
                continue
            payload = tx.payload
            if isinstance(payload, DemandReport) and shard_id == payload.shard:
                per_epoch = self.reports.setdefault(payload.epoch, {})
                per_epoch[payload.shard] = dict(payload.demands)
                if len(per_epoch) == len(self.cluster.shards):
                    self._phase[payload.epoch] = "plan"
            elif isinstance(payload, PlanningStrategy):
                ref = reference_shard(payload.epoch, len(self.cluster.shards))
                if shard_id != ref or payload.epoch in self.plans:
                    continue
                self.plans[payload.epoch] = payload
                self._phase[payload.epoch] = "done"
                self.log.append({"event": "plan", "epoch": payload.epoch,
                                 "moves": list(payload.moves)})
                for table, src, dst in payload.moves:
                    if table not in self.mgr.migrations:
                        self.mgr.start_live(table, src, dst)

    # --- validation (plugged into the migration manager's fallback) ---

    def validate_control(self, node, tx: Transaction):
        payload = tx.payload
        if isinstance(payload, DemandReport):
            if node.shard_id == payload.shard:
                want = compute_demand(self.cluster, node, payload.epoch)
                if tuple(sorted(want.items())) != payload.demands:
                    return False, "bad-metadata: demand recomputation mismatch"
            return True, None
        if isinstance(payload, PlanningStrategy):
            reports = self.reports.get(payload.epoch)
            if reports is None or len(reports) != len(self.cluster.shards):
                return False, "bad-plan: demand reports incomplete"
            demands = self.merged_demands(payload.epoch)
            moves, place = greedy_plan(demands, node.location.placement,
                                       len(self.cluster.shards))
            if tuple(moves) != payload.moves or \
                    tuple(sorted(place.items())) != payload.placement:
                return False, "bad-plan: greedy recomputation mismatch"
            return True, None
        return False, "bad-metadata: unknown control payload"
