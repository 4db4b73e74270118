"""Cluster runtime: node/shard construction, validation dispatch, and the
round-by-round commit driver.

This is the environment object the protocol modules run against.  The
simulation harness drives it through rounds with transport timing and
workloads on top; tests can also call `commit` directly for synchronous
protocol checks.  One `commit` call is one consensus round in every shard
that has transactions.
"""

from __future__ import annotations

from fractions import Fraction

from . import query, vso
from .encoding import sha256
from .errors import InternalInvariantError
from .ledger import Node, Shard, ShardConfig
from .merkle import TableLocationTree, spv_check
from .relational import sql
from .relational.schema import Table
from .wire import (KIND_CONTROL, KIND_DATA, KIND_QUERY, DmlPayload,
                   QueryPayload, Transaction)


class Cluster:
    def __init__(self, *, placement: dict, schemas: dict, rows: dict | None = None,
                 shard_count: int | None = None, nodes_per_shard: int = 4,
                 byzantine: dict | None = None,
                 fault_threshold: Fraction = Fraction(1, 3),
                 keys: vso.VsoKeys | None = None, vso_capacity: int = 512,
                 seed: int = 7, pushdown: bool = True, use_bloom: bool = True,
                 blob_threshold: int = 1024, shipment_batch: int = 1):
        self.placement = dict(placement)
        self.schemas = dict(schemas)
        self.pushdown = pushdown
        self.use_bloom = use_bloom
        self.blob_threshold = blob_threshold
        self.shipment_batch = shipment_batch
        self.registry = query.ElementRegistry()
        self.keys = keys if keys is not None else vso.gen_key(vso_capacity, seed)
        self.epoch = 0
        self.round = 0
        self._nonce = 0
        self._parse_cache: dict[str, object] = {}
        self._blobs: dict[bytes, bytes] = {}
        self._validation_cache: dict = {}
        self.transfers: list = []
        self.events: list = []
        self.adversary = None
        self.dml_gate = None
        self.control_validator = None
        self.on_commit: list = []  # callbacks(block, shard) after each commit

        count = shard_count if shard_count is not None else (
            max(placement.values()) + 1 if placement else 1)
        byzantine = byzantine or {}
        location = TableLocationTree(self.placement)
        genesis: dict[str, Table] = {}
        for name, schema in self.schemas.items():
            t = Table(schema)
            for values in (rows or {}).get(name, []):
                t.insert(values, b"genesis", 0)
            genesis[name] = t

        self.nodes: dict[int, Node] = {}
        self.shards: dict[int, Shard] = {}
        for sid in range(count):
            shard_nodes = []
            byz_ids = set()
            for i in range(nodes_per_shard):
                nid = sid * nodes_per_shard + i
                is_byz = i in byzantine.get(sid, set())
                node = Node(nid, sid, is_byz)
                node.location = location
                for name, owner in self.placement.items():
                    if owner == sid:
                        node.tables[name] = genesis[name].clone()
                shard_nodes.append(node)
                self.nodes[nid] = node
                if is_byz:
                    byz_ids.add(nid)
            config = ShardConfig(sid, [n.node_id for n in shard_nodes],
                                 byz_ids, fault_threshold)
            self.shards[sid] = Shard(config, shard_nodes)
            if config.assumption_violated():
                self.events.append({
                    "event": "assumption-violated", "shard": sid,
                    "byzantine": len(byz_ids), "nodes": nodes_per_shard,
                })

    # --- environment interface used by the protocol modules ---

    def parse(self, text: str):
        stmt = self._parse_cache.get(text)
        if stmt is None:
            stmt = sql.parse(text)
            self._parse_cache[text] = stmt
        return stmt

    def locations(self) -> TableLocationTree:
        return self.node_of_shard(0).location

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def node_of_shard(self, shard_id: int) -> Node:
        return self.shards[shard_id].reference_node()

    def next_nonce(self) -> int:
        self._nonce += 1
        return self._nonce

    def record_transfer(self, shard: int, nbytes: int) -> None:
        self.transfers.append((self.round, shard, nbytes))

    def maybe_blob(self, relation) -> object:
        data = relation.to_bytes()
        if len(data) <= self.blob_threshold:
            return relation
        digest = sha256(data)
        self._blobs[digest] = data
        return digest

    def blob_get(self, digest: bytes):
        return self._blobs.get(digest)

    def subquery_values(self, payload: DmlPayload) -> dict:
        if payload.subquery is None:
            return {}
        return {1: {v[0] for v in payload.subquery.final_values}}

    # --- validation dispatch (the validateTx operation) ---

    def validate(self, node: Node, tx: Transaction) -> tuple[bool, str | None]:
        # honest nodes of one shard share state at a height, so data/query
        # verdicts are memoized per shard; control verdicts can depend on
        # per-node progress (e.g. migration downloads) and are not collapsed
        if tx.kind == KIND_CONTROL:
            key = (node.shard_id, node.node_id, tx.id, node.height)
        else:
            key = (node.shard_id, tx.id, node.height)
        hit = self._validation_cache.get(key)
        if hit is not None:
            return hit
        out = self._validate(node, tx)
        self._validation_cache[key] = out
        return out

    def _validate(self, node: Node, tx: Transaction):
        if tx.kind == KIND_DATA:
            return query.validate_dml_tx(node, tx, self)
        if tx.kind == KIND_QUERY:
            if not isinstance(tx.payload, QueryPayload):
                return False, "malformed-payload: not a query payload"
            return query.validate_query_payload(node, tx.payload, self)
        if tx.kind == KIND_CONTROL:
            if self.control_validator is None:
                return False, "bad-metadata: no control validator installed"
            return self.control_validator(node, tx)
        return False, f"malformed-payload: unknown kind {tx.kind}"

    # --- commit driver ---

    def commit(self, txs: list) -> dict:
        """One consensus round over the given transactions.

        Cross-shard transactions commit in every involved shard or none
        (coordinator-atomic).  Returns {tx id: (committed, reason)}.
        """
        self.round += 1
        outcomes: dict = {}
        staged: dict[int, list] = {}
        for tx in txs:
            verdicts = []
            for sid in tx.involved:
                ok, reason = self.shards[sid].quorum_verdict(tx, self, self.adversary)
                verdicts.append((sid, ok, reason))
                if not ok:
                    break
            failed = [(sid, reason) for sid, ok, reason in verdicts if not ok]
            if failed:
                sid, reason = failed[0]
                outcomes[tx.id] = (False, f"{reason} @shard{sid}")
                self.events.append({
                    "event": "abort", "tx": tx.id.hex(), "kind": tx.kind,
                    "shard": sid, "reason": reason, "round": self.round,
                })
                continue
            outcomes[tx.id] = (True, None)
            for sid in tx.involved:
                staged.setdefault(sid, []).append(tx)
        for sid in sorted(staged):
            shard = self.shards[sid]
            block = shard.build_block(staged[sid], self.epoch)
            shard.commit_block(block, self)
            self._broadcast_header(block.header)
            self.events.append({
                "event": "block", "shard": sid, "height": block.header.height,
                "round": self.round, "txs": [t.id.hex() for t in block.txs],
            })
            for cb in self.on_commit:
                cb(block, sid)
        return outcomes

    def _broadcast_header(self, header) -> None:
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if node.shard_id != header.shard_id:
                node.observe_header(header)

    def commit_one(self, tx: Transaction) -> tuple[bool, str | None]:
        return self.commit([tx])[tx.id]

    # --- client-side acceptance ---

    def spv_proofs(self, tx: Transaction) -> dict:
        return {sid: self.shards[sid].spv_proof_for(tx) for sid in tx.involved}

    def client_headers(self) -> dict:
        """Header chains as a light client sees them (complete, per the
        instant-broadcast decision)."""
        out = {}
        for sid, shard in self.shards.items():
            node = shard.reference_node()
            out[sid] = [b.header for b in node.chain]
        return out

    def client_accept_query(self, tx: Transaction, proofs: dict | None = None):
        """SPV acceptance of a committed query tx; returns (ok, reason,
        final values)."""
        if proofs is None:
            try:
                proofs = self.spv_proofs(tx)
            except InternalInvariantError:
                return False, "incomplete: not committed everywhere", None
        ok, reason = spv_check(tx.id, self.client_headers(), proofs,
                               set(tx.involved))
        if not ok:
            return False, reason, None
        return True, None, [tuple(v) for v in tx.payload.final_values]

    # --- invariants used by tests and replay verification ---

    def honest_state_digests(self, shard_id: int) -> list:
        return [n.state_digest() for n in self.shards[shard_id].honest_nodes]

    def assert_replication(self) -> None:
        for sid, shard in self.shards.items():
            digests = set(self.honest_state_digests(sid))
            if len(digests) > 1:
                raise InternalInvariantError(
                    f"honest nodes of shard {sid} diverged"
                )

    def move_table(self, name: str, dest: int) -> None:
        """Flip ownership in every node's location tree (migration commit
        path); the table store handoff is the migration module's job."""
        self.placement[name] = dest
        new_tree = None
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if new_tree is None:
                new_tree = node.location.with_move(name, dest)
            node.location = new_tree
