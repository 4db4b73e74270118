"""Off-chain live table migration and the stop-restart baseline.

Live path, per table: Normal -> Init -> Dual -> Completed.

- Init: source nodes stop proposing new data transactions for the table,
  build checkpoint metadata (Merkle root over canonical row encodings at
  the checkpoint height) and commit a cross-shard init control tx carrying
  metadata + checkpoint height.  Honest validators recompute the metadata,
  so a Byzantine proposal with wrong metadata aborts and is retried.
- Dual: the source keeps serving the table; each new data transaction gets
  a dense dual-mode sequence number checked by validators.  Bulk rows
  stream off-chain to every destination node (chunk rows carry Merkle
  paths against the on-chain metadata; pre-copied rows are revalidated the
  same way).  Committed dual transactions are gossiped as notifications
  {tx, Merkle proof, seq} over a lossy channel; receivers detect sequence
  gaps and re-request.
- Completion: when enough destination nodes finished the bulk download the
  completion control tx commits (votes are per-node download state),
  ownership flips in the location tree, the source commits the dual-count
  control tx, and destination nodes serve only after replaying all counted
  dual transactions on top of the checkpoint.

Exactly three on-chain control transactions per migration, independent of
table size.  The stop-restart baseline instead halts the table and ships
every row batch as a cross-shard data transaction plus an end marker.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import InternalInvariantError
from .merkle import MerkleProof, MerkleTree, verify_leaf
from .relational import executor
from .relational.schema import Table
from .wire import (KIND_CONTROL, KIND_DATA, DmlPayload, MigrationComplete,
                   MigrationCount, MigrationEnd, MigrationInit,
                   ShipmentPayload, Transaction, WireRow)

NORMAL = "normal"
INIT = "init"
DUAL = "dual"
COUNTING = "counting"
DRAINING = "draining"
COMPLETED = "completed"

EMPTY_ROOT = b"\x00" * 32


def table_metadata(table: Table, height: int) -> bytes:
    """Checkpoint metadata: Merkle root over canonical row encodings."""
    encodings = table.row_encodings(height)
    if not encodings:
        return EMPTY_ROOT
    return MerkleTree(encodings).root


@dataclass
class Notification:
    """Off-chain dual-mode sync message: a committed data transaction with
    its Merkle membership proof in a source-shard block."""

    tx: Transaction
    source_shard: int
    height: int
    proof: MerkleProof
    seq: int

    def verify(self, node) -> bool:
        chain = node.headers.get(self.source_shard, [])
        if not 1 <= self.height <= len(chain):
            return False
        header = chain[self.height - 1]
        if self.proof.root != header.tx_root:
            return False
        return verify_leaf(self.tx.id, self.proof)


@dataclass
class _DestProgress:
    bulk_rows: list = field(default_factory=list)
    cursor: int = 0
    bulk_done: bool = False
    notifications: dict = field(default_factory=dict)  # seq -> Transaction
    applied_seq: int = 0
    table: Table | None = None
    refetches: int = 0
    rejected_chunks: int = 0


@dataclass
class MigrationState:
    table: str
    source: int
    dest: int
    mode: str = NORMAL
    metadata: bytes = b""
    checkpoint_height: int = 0
    next_seq: int = 1
    committed_dual: int = 0
    announced_total: int | None = None
    started_round: int = 0
    completed_round: int | None = None
    interruption_rounds: int = 0
    control_tx_ids: list = field(default_factory=list)
    bulk_bytes: int = 0
    notif_sent: int = 0
    notif_dropped: int = 0
    precopy_bytes: int = 0


class LiveMigration:
    """One table's migration; stepped once per round by the manager."""

    def __init__(self, manager, table: str, source: int, dest: int,
                 precopy: bool = False):
        self.mgr = manager
        self.state = MigrationState(table, source, dest,
                                    started_round=manager.cluster.round)
        self.state.mode = INIT
        self.precopy = precopy
        cluster = manager.cluster
        self.dest_nodes = {n.node_id: _DestProgress()
                           for n in cluster.shards[dest].nodes}
        self.log: list = []
        self._outbox: list = []
        self._session = None  # (rows, tree, height, validate)
        if precopy:
            self._begin_bulk(validate=False)

    # --- round driver ---

    def pending_txs(self) -> list:
        cluster = self.mgr.cluster
        st = self.state
        self._round_start_mode = st.mode
        if st.mode == INIT:
            src_node = cluster.node_of_shard(st.source)
            st.checkpoint_height = src_node.height
            metadata = table_metadata(src_node.tables[st.table], st.checkpoint_height)
            payload = MigrationInit(st.table, st.source, st.dest, metadata,
                                    st.checkpoint_height)
            payload = self.mgr.tamper_init(payload)
            return [Transaction(KIND_CONTROL, tuple(sorted({st.source, st.dest})),
                                payload, proposer=self._src_proposer(),
                                nonce=cluster.next_nonce())]
        if st.mode == DUAL and self._bulk_quorum_reached():
            payload = MigrationComplete(st.table, st.source, st.dest)
            return [Transaction(KIND_CONTROL, tuple(sorted({st.dest, st.source})),
                                payload, proposer=self._dst_proposer(),
                                nonce=cluster.next_nonce())]
        if st.mode == COUNTING:
            payload = MigrationCount(st.table, st.source, st.dest, st.committed_dual)
            return [Transaction(KIND_CONTROL, (st.source,), payload,
                                proposer=self._src_proposer(),
                                nonce=cluster.next_nonce())]
        return []

    def after_round(self) -> None:
        st = self.state
        started = getattr(self, "_round_start_mode", st.mode)
        if started in (INIT, COUNTING, DRAINING):
            st.interruption_rounds += 1  # table had no serving shard this round
        if st.mode == INIT and self.precopy:
            self._advance_bulk()
        if st.mode == DUAL:
            if self._session is None:
                self._begin_bulk(validate=True)
            self._advance_bulk()
        if st.mode in (DUAL, COUNTING, DRAINING):
            # gossip keeps flowing after dual mode ends so late notifications
            # still arrive without an explicit re-request
            self._deliver_notifications()
            self._refetch_gaps()
        if st.mode == DRAINING:
            self._refetch_gaps(force=True)
            if self._all_honest_ready():
                self._finish()

    # --- mode transitions driven by committed control txs ---

    def on_control_committed(self, tx: Transaction) -> None:
        st = self.state
        payload = tx.payload
        if isinstance(payload, MigrationInit) and st.mode == INIT:
            st.metadata = payload.metadata
            st.checkpoint_height = payload.checkpoint_height
            st.mode = DUAL
            st.control_tx_ids.append(tx.id.hex())
            if self.precopy:
                self._validate_precopy()
            else:
                self._session = None
            self.log.append({"event": "mode", "mode": DUAL,
                             "round": self.mgr.cluster.round})
        elif isinstance(payload, MigrationComplete) and st.mode == DUAL:
            st.mode = COUNTING
            st.control_tx_ids.append(tx.id.hex())
            # ownership flips now: later traffic routes to the destination
            self.mgr.cluster.move_table(st.table, st.dest)
            self.log.append({"event": "mode", "mode": COUNTING,
                             "round": self.mgr.cluster.round})
        elif isinstance(payload, MigrationCount) and st.mode == COUNTING:
            st.announced_total = payload.total
            st.mode = DRAINING
            st.control_tx_ids.append(tx.id.hex())
            self.log.append({"event": "mode", "mode": DRAINING,
                             "round": self.mgr.cluster.round})

    def on_dual_committed(self, tx: Transaction, block_height: int) -> None:
        """Called for every data tx of this table committed at the source
        during dual mode; emits notifications to every destination node."""
        st = self.state
        st.committed_dual += 1
        st.next_seq = st.committed_dual + 1
        cluster = self.mgr.cluster
        shard = cluster.shards[st.source]
        block = shard.reference_node().chain[block_height - 1]
        ids = [t.id for t in block.txs]
        proof = block.tx_tree().prove(ids.index(tx.id))
        note = Notification(tx, st.source, block_height, proof, tx.dual_seq)
        self._outbox.append(note)

    # --- internals ---

    def _src_proposer(self) -> int:
        return self.mgr.cluster.shards[self.state.source].nodes[0].node_id

    def _dst_proposer(self) -> int:
        return self.mgr.cluster.shards[self.state.dest].nodes[0].node_id

    def _begin_bulk(self, validate: bool) -> None:
        """Open one transfer session per destination node; rows then stream
        at the manager's per-round rate, each carrying a Merkle path against
        the checkpoint metadata."""
        st = self.state
        cluster = self.mgr.cluster
        src_node = cluster.node_of_shard(st.source)
        height = st.checkpoint_height if validate else src_node.height
        table = src_node.tables[st.table]
        encodings = table.row_encodings(height)
        rows = [WireRow(r.values, r.txid, r.seq, r.valid_at(height))
                for r in table.rows if r.created_height <= height]
        tree = MerkleTree(encodings) if encodings else None
        self._session = {"rows": rows, "tree": tree, "validate": validate,
                         "encodings": encodings}
        for progress in self.dest_nodes.values():
            progress.bulk_rows = []
            progress.cursor = 0
            progress.bulk_done = validate and not rows and st.metadata == EMPTY_ROOT

    def _advance_bulk(self) -> None:
        if self._session is None:
            return
        st = self.state
        sess = self._session
        rows, tree, validate = sess["rows"], sess["tree"], sess["validate"]
        rate = self.mgr.bulk_rows_per_round
        for nid, progress in self.dest_nodes.items():
            if progress.bulk_done or progress.cursor >= len(rows):
                if validate and not progress.bulk_done and progress.cursor >= len(rows):
                    progress.bulk_done = self._bulk_matches(progress, st)
                continue
            hi = min(progress.cursor + rate, len(rows))
            for i in range(progress.cursor, hi):
                wr_sent = self.mgr.tamper_chunk(rows[i], nid)
                nbytes = len(sess["encodings"][i]) + 64  # row + merkle path
                if validate:
                    st.bulk_bytes += nbytes
                    proof = tree.prove(i)
                    leaf = self._encode_wire_row(wr_sent)
                    if proof.root != st.metadata or not verify_leaf(leaf, proof):
                        # tampered chunk rejected; refetch the honest row
                        progress.rejected_chunks += 1
                        progress.refetches += 1
                        st.bulk_bytes += nbytes
                        wr_sent = rows[i]
                else:
                    st.precopy_bytes += nbytes
                progress.bulk_rows.append(wr_sent)
            progress.cursor = hi
            if validate and progress.cursor >= len(rows):
                progress.bulk_done = self._bulk_matches(progress, st)

    def _encode_wire_row(self, wr: WireRow) -> bytes:
        from .encoding import enc_bytes, enc_seq, enc_u64
        from .relational.schema import encode_value
        schema = self.mgr.cluster.schemas[self.state.table]
        return (enc_seq(encode_value(t, v) for (_, t), v in zip(schema.columns, wr.values))
                + enc_bytes(wr.txid) + enc_u64(wr.seq)
                + (b"\x01" if wr.valid else b"\x00"))

    def _bulk_matches(self, progress: _DestProgress, st: MigrationState) -> bool:
        encodings = [self._encode_wire_row(wr) for wr in progress.bulk_rows]
        root = MerkleTree(encodings).root if encodings else EMPTY_ROOT
        return root == st.metadata

    def _validate_precopy(self) -> None:
        """On dual entry, accept pre-copied rows iff the full download is
        present and matches the on-chain metadata; otherwise restart a
        validated transfer."""
        st = self.state
        sess = self._session
        complete = sess is not None and all(
            p.cursor >= len(sess["rows"]) for p in self.dest_nodes.values())
        if complete and all(self._bulk_matches(p, st)
                            for p in self.dest_nodes.values()):
            for p in self.dest_nodes.values():
                p.bulk_done = True
            sess["validate"] = True
            self.log.append({"event": "precopy-hit", "post_init_bulk_bytes": 0})
        else:
            self._begin_bulk(validate=True)

    def _bulk_quorum_reached(self) -> bool:
        cluster = self.mgr.cluster
        shard = cluster.shards[self.state.dest]
        done = sum(1 for n in shard.honest_nodes
                   if self.dest_nodes[n.node_id].bulk_done)
        return done >= max(1, len(shard.honest_nodes) // 2 + 1)

    def _deliver_notifications(self) -> None:
        st = self.state
        outbox, self._outbox = self._outbox, []
        for note in outbox:
            for nid, progress in self.dest_nodes.items():
                st.notif_sent += 1
                if self.mgr.rng.random() < self.mgr.drop_prob:
                    st.notif_dropped += 1
                    continue
                note_sent = self.mgr.tamper_notification(note, nid)
                node = self.mgr.cluster.nodes[nid]
                if note_sent.verify(node):
                    progress.notifications[note_sent.seq] = note_sent.tx
                else:
                    self.log.append({"event": "bad-notification", "node": nid})

    def _refetch_gaps(self, force: bool = False) -> None:
        """Destination nodes request sequences they can see are missing."""
        st = self.state
        for nid, progress in self.dest_nodes.items():
            have = progress.notifications
            horizon = st.announced_total if force and st.announced_total is not None \
                else (max(have) if have else 0)
            for seq in range(1, horizon + 1):
                if seq not in have:
                    tx = self.mgr.dual_tx_by_seq(st.table, seq)
                    if tx is not None:
                        have[seq] = tx
                        progress.refetches += 1

    def _node_ready(self, progress: _DestProgress) -> bool:
        st = self.state
        if not progress.bulk_done or st.announced_total is None:
            return False
        return all(seq in progress.notifications
                   for seq in range(1, st.announced_total + 1))

    def _all_honest_ready(self) -> bool:
        shard = self.mgr.cluster.shards[self.state.dest]
        return all(self._node_ready(self.dest_nodes[n.node_id])
                   for n in shard.honest_nodes)

    def _finish(self) -> None:
        """Install the rebuilt table on every destination node and drop the
        source copies; replays are in dual-sequence order on the checkpoint."""
        st = self.state
        cluster = self.mgr.cluster
        for node in cluster.shards[st.dest].nodes:
            progress = self.dest_nodes[node.node_id]
            rebuilt = Table(cluster.schemas[st.table])
            for wr in progress.bulk_rows:
                row = rebuilt.insert(wr.values, wr.txid, 0)
                if not wr.valid:
                    rebuilt.invalidate(row.seq, 0)
            node.tables[st.table] = rebuilt
            stores = dict(node.tables)
            for seq in range(1, (st.announced_total or 0) + 1):
                tx = progress.notifications[seq]
                for text in tx.payload.statements:
                    stmt = cluster.parse(text)
                    executor.apply_dml(stmt, cluster.schemas, stores,
                                       node.location, node.height, tx.id,
                                       cluster.subquery_values(tx.payload))
        for node in cluster.shards[st.source].nodes:
            node.tables.pop(st.table, None)
        st.mode = COMPLETED
        st.completed_round = cluster.round
        self.log.append({"event": "mode", "mode": COMPLETED, "round": cluster.round})


class StopRestartMigration:
    """Baseline: halt the table, ship every row batch as a cross-shard data
    transaction, then an end marker; the destination takes over only after
    the marker commits.  Service is interrupted for the whole span."""

    def __init__(self, manager, table: str, source: int, dest: int,
                 batch_size: int = 10):
        self.mgr = manager
        self.table = table
        self.source = source
        self.dest = dest
        self.batch_size = batch_size
        cluster = manager.cluster
        self.state = MigrationState(table, source, dest,
                                    started_round=cluster.round)
        self.state.mode = "stop-restart"
        src_node = cluster.node_of_shard(source)
        self.halt_height = src_node.height
        table_obj = src_node.tables[table]
        self.rows = [WireRow(r.values, r.txid, r.seq, r.valid_at(self.halt_height))
                     for r in table_obj.rows if r.created_height <= self.halt_height]
        self.total_batches = (len(self.rows) + batch_size - 1) // batch_size
        self.sent_batches = 0
        self.end_committed = False
        self.log: list = []

    def pending_txs(self) -> list:
        cluster = self.mgr.cluster
        self._round_start_active = self.state.mode != COMPLETED
        if self.sent_batches < self.total_batches:
            i = self.sent_batches
            lo = i * self.batch_size
            payload = ShipmentPayload(self.table, self.source, "migration", i,
                                      self.batch_size, self.halt_height,
                                      tuple(self.rows[lo:lo + self.batch_size]))
            return [Transaction(KIND_DATA, tuple(sorted({self.source, self.dest})),
                                payload, proposer=self._src_proposer(),
                                nonce=cluster.next_nonce())]
        if not self.end_committed:
            payload = MigrationEnd(self.table, self.source, self.dest,
                                   self.total_batches)
            return [Transaction(KIND_CONTROL, tuple(sorted({self.source, self.dest})),
                                payload, proposer=self._src_proposer(),
                                nonce=cluster.next_nonce())]
        return []

    def after_round(self) -> None:
        if getattr(self, "_round_start_active", True):
            self.state.interruption_rounds += 1

    def on_shipment_committed(self) -> None:
        self.sent_batches += 1

    def on_control_committed(self, tx: Transaction) -> None:
        if not isinstance(tx.payload, MigrationEnd):
            return
        self.end_committed = True
        cluster = self.mgr.cluster
        self.state.control_tx_ids.append(tx.id.hex())
        for node in cluster.shards[self.dest].nodes:
            batches = node.staging.get(("migration", self.table), {})
            rebuilt = Table(cluster.schemas[self.table])
            for idx in sorted(batches):
                for wr in batches[idx].rows:
                    row = rebuilt.insert(wr.values, wr.txid, 0)
                    if not wr.valid:
                        rebuilt.invalidate(row.seq, 0)
            node.tables[self.table] = rebuilt
        for node in cluster.shards[self.source].nodes:
            node.tables.pop(self.table, None)
        cluster.move_table(self.table, self.dest)
        self.state.mode = COMPLETED
        self.state.completed_round = cluster.round
        self.log.append({"event": "mode", "mode": COMPLETED,
                         "round": cluster.round})

    def _src_proposer(self) -> int:
        return self.mgr.cluster.shards[self.source].nodes[0].node_id


class MigrationManager:
    """Owns every in-flight migration, validates migration control
    transactions, gates data transactions on migrating tables, and tracks
    committed dual-mode transactions for gap refetches."""

    def __init__(self, cluster, rng: random.Random | None = None,
                 drop_prob: float = 0.0, bulk_rows_per_round: int = 64):
        self.cluster = cluster
        self.rng = rng or random.Random(0)
        self.drop_prob = drop_prob
        self.bulk_rows_per_round = bulk_rows_per_round
        self.migrations: dict[str, object] = {}
        self.pending_starts: list = []
        self.query_lock = None  # callable(table) -> bool, set by the harness
        self.history: list = []
        self.dual_txs: dict[str, dict[int, Transaction]] = {}
        self._tamper_init = None
        self._tamper_chunk = None
        self._tamper_notification = None
        cluster.control_validator = self.validate_control
        cluster.dml_gate = self.gate
        cluster.on_commit.append(self.observe_block)

    # --- lifecycle ---

    def start_live(self, table: str, source: int, dest: int,
                   precopy: bool = False):
        """Begin a live migration; deferred while a cross-shard query holds
        the table's snapshot (migrations serialize behind in-flight queries)."""
        self._check_startable(table, source)
        if self.query_lock is not None and self.query_lock(table):
            self.pending_starts.append((table, source, dest, precopy))
            return None
        mig = LiveMigration(self, table, source, dest, precopy)
        self.migrations[table] = mig
        return mig

    def start_stop_restart(self, table: str, source: int, dest: int,
                           batch_size: int = 10) -> StopRestartMigration:
        self._check_startable(table, source)
        mig = StopRestartMigration(self, table, source, dest, batch_size)
        self.migrations[table] = mig
        return mig

    def _check_startable(self, table: str, source: int) -> None:
        if table in self.migrations:
            raise InternalInvariantError(f"{table} is already migrating")
        if self.cluster.locations().shard_of(table) != source:
            raise InternalInvariantError(f"{table} is not owned by shard {source}")

    def active(self) -> list:
        return [m for m in self.migrations.values()
                if m.state.mode != COMPLETED]

    def pending_txs(self) -> list:
        out = []
        for table in sorted(self.migrations):
            mig = self.migrations[table]
            if mig.state.mode != COMPLETED:
                out.extend(mig.pending_txs())
        return out

    def after_round(self) -> None:
        still_waiting = []
        for table, source, dest, precopy in self.pending_starts:
            if table in self.migrations or \
                    self.cluster.locations().shard_of(table) != source:
                continue
            if self.query_lock is not None and self.query_lock(table):
                still_waiting.append((table, source, dest, precopy))
                continue
            self.migrations[table] = LiveMigration(self, table, source, dest, precopy)
        self.pending_starts = still_waiting
        for table in sorted(self.migrations):
            self.migrations[table].after_round()
        for table in [t for t, m in self.migrations.items()
                      if m.state.mode == COMPLETED]:
            self.history.append(self.migrations.pop(table))

    def run_to_completion(self, max_rounds: int = 500) -> None:
        """Synchronous driver for tests and benches."""
        rounds = 0
        while self.active():
            self.cluster.commit(self.pending_txs())
            self.after_round()
            rounds += 1
            if rounds > max_rounds:
                raise InternalInvariantError("migration failed to complete")

    # --- adversary hooks ---

    def tamper_init(self, payload: MigrationInit) -> MigrationInit:
        return self._tamper_init(payload) if self._tamper_init else payload

    def tamper_chunk(self, wire_row: WireRow, dest_node: int) -> WireRow:
        return self._tamper_chunk(wire_row, dest_node) if self._tamper_chunk else wire_row

    def tamper_notification(self, note: Notification, dest_node: int) -> Notification:
        if self._tamper_notification:
            return self._tamper_notification(note, dest_node)
        return note

    # --- wiring into the cluster ---

    def observe_block(self, block, shard_id: int) -> None:
        for tx in block.txs:
            if tx.kind == KIND_CONTROL:
                payload = tx.payload
                table = getattr(payload, "table", None)
                mig = self.migrations.get(table)
                if mig is not None:
                    mig.on_control_committed(tx)
            elif tx.kind == KIND_DATA and tx.dual_seq is not None:
                table = self._dml_table(tx)
                mig = self.migrations.get(table)
                self.dual_txs.setdefault(table, {})[tx.dual_seq] = tx
                if isinstance(mig, LiveMigration) and shard_id == mig.state.source:
                    mig.on_dual_committed(tx, block.header.height)
            elif tx.kind == KIND_DATA and isinstance(tx.payload, ShipmentPayload) \
                    and tx.payload.purpose == "migration":
                mig = self.migrations.get(tx.payload.table)
                if isinstance(mig, StopRestartMigration) and shard_id == mig.source:
                    mig.on_shipment_committed()

    def _dml_table(self, tx: Transaction) -> str | None:
        if isinstance(tx.payload, DmlPayload) and tx.payload.statements:
            return self.cluster.parse(tx.payload.statements[0]).table
        return None

    def dual_tx_by_seq(self, table: str, seq: int):
        return self.dual_txs.get(table, {}).get(seq)

    def table_servable(self, table: str) -> bool:
        """Queries are served during normal, init and dual modes; not while
        the table is between owners or halted by the stop-restart baseline."""
        mig = self.migrations.get(table)
        if mig is None or mig.state.mode == COMPLETED:
            return True
        if isinstance(mig, StopRestartMigration):
            return False
        return mig.state.mode in (INIT, DUAL)

    def prepare_data_tx(self, tx: Transaction) -> Transaction:
        """Assign the dual-mode sequence number when the target table is in
        dual mode at its source shard."""
        table = self._dml_table(tx)
        mig = self.migrations.get(table)
        if isinstance(mig, LiveMigration) and mig.state.mode == DUAL:
            return tx.with_dual_seq(mig.state.committed_dual + 1)
        return tx

    def gate(self, shard_id: int, table: str, tx: Transaction):
        mig = self.migrations.get(table)
        if mig is None or mig.state.mode == COMPLETED:
            if tx.dual_seq is not None:
                return False, "bad-metadata: dual sequence outside dual mode"
            return True, None
        st = mig.state
        if isinstance(mig, StopRestartMigration):
            if isinstance(tx.payload, ShipmentPayload):
                return True, None
            return False, "migration-halted: table is migrating (stop-restart)"
        if st.mode == INIT:
            return False, "migration-init: new data transactions excluded during init"
        if st.mode == DUAL:
            if shard_id != st.source:
                return False, "migration-routing: dual-mode table is served by its source"
            want = st.committed_dual + 1
            if tx.dual_seq != want:
                return False, f"bad-metadata: dual sequence {tx.dual_seq} != {want}"
            return True, None
        return False, "migration-handover: table is between owners"

    # --- control-transaction validation ---

    def validate_control(self, node, tx: Transaction):
        payload = tx.payload
        if isinstance(payload, MigrationInit):
            return self._validate_init(node, payload)
        if isinstance(payload, MigrationComplete):
            return self._validate_complete(node, payload)
        if isinstance(payload, MigrationCount):
            return self._validate_count(node, payload)
        if isinstance(payload, MigrationEnd):
            return self._validate_end(node, payload)
        if self.fallback_validator is not None:
            return self.fallback_validator(node, tx)
        return False, "bad-metadata: unknown control payload"

    fallback_validator = None  # balancer plugs in here

    def _validate_init(self, node, payload: MigrationInit):
        if node.location.shard_of(payload.table) != payload.source:
            return False, "bad-metadata: table not owned by claimed source"
        if node.shard_id == payload.source:
            table = node.tables.get(payload.table)
            if table is None:
                return False, "bad-metadata: source node lacks the table"
            if payload.checkpoint_height > node.height:
                return False, "bad-metadata: checkpoint beyond committed height"
            want = table_metadata(table, payload.checkpoint_height)
            if want != payload.metadata:
                return False, "bad-metadata: checkpoint digest mismatch"
        return True, None

    def _validate_complete(self, node, payload: MigrationComplete):
        mig = self.migrations.get(payload.table)
        if not isinstance(mig, LiveMigration) or mig.state.mode != DUAL:
            return False, "bad-metadata: no dual-mode migration for table"
        if node.shard_id == payload.dest:
            progress = mig.dest_nodes.get(node.node_id)
            if progress is None or not progress.bulk_done:
                return False, "download-incomplete"
        return True, None

    def _validate_count(self, node, payload: MigrationCount):
        mig = self.migrations.get(payload.table)
        if not isinstance(mig, LiveMigration) or mig.state.mode != COUNTING:
            return False, "bad-metadata: count outside counting phase"
        if node.shard_id == payload.source:
            if payload.total != mig.state.committed_dual:
                return False, "bad-metadata: dual-mode total mismatch"
        return True, None

    def _validate_end(self, node, payload: MigrationEnd):
        mig = self.migrations.get(payload.table)
        if not isinstance(mig, StopRestartMigration):
            return False, "bad-metadata: no stop-restart migration for table"
        if node.shard_id == payload.source:
            if payload.total_batches != mig.total_batches:
                return False, "bad-metadata: batch count mismatch"
            if mig.sent_batches < mig.total_batches:
                return False, "bad-metadata: batches still outstanding"
        return True, None
