"""Per-shard replicated ledgers with simulated BFT consensus.

The consensus is an abstraction, not a wire protocol: per round, a shard
takes candidate transactions, every node produces a verdict (honest nodes
run the deterministic validator, Byzantine nodes vote however the active
adversary says, contrarian by default), and a transaction commits when its
yes-votes reach ceil((1 - v) * n).  With at most a v fraction Byzantine,
the committed set equals the honest verdict; configurations beyond the
threshold are flagged by the harness rather than silently trusted.

Honest nodes keep independent stores and apply committed blocks locally;
state-machine replication is asserted by digest comparison in the tests,
not by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .encoding import Reader, enc_bytes, enc_seq, sha256
from .errors import InternalInvariantError
from .merkle import GENESIS_DIGEST, BlockHeader, MerkleTree, SpvProof, TableLocationTree
from .relational import executor, sql
from .relational.schema import Table
from .wire import (DmlPayload, KIND_CONTROL, KIND_DATA, KIND_QUERY,
                   ShipmentPayload, Transaction)


@dataclass
class Block:
    header: BlockHeader
    txs: list  # Transaction list

    def to_bytes(self) -> bytes:
        return self.header.to_bytes() + enc_seq(enc_bytes(t.to_bytes()) for t in self.txs)

    @classmethod
    def from_reader(cls, r: Reader) -> "Block":
        header = BlockHeader.from_reader(r)
        txs = r.seq(lambda rr: Transaction.from_reader(Reader(rr.bytes_())))
        return cls(header, txs)

    def tx_tree(self) -> MerkleTree:
        return MerkleTree([t.id for t in self.txs])


@dataclass
class ShardConfig:
    shard_id: int
    node_ids: list
    byzantine: set  # node ids known to the harness only
    fault_threshold: Fraction  # 1/3 or 1/2

    @property
    def quorum(self) -> int:
        n = len(self.node_ids)
        need = (1 - self.fault_threshold) * n
        return -int(-need // 1)  # ceil

    def assumption_violated(self) -> bool:
        return Fraction(len(self.byzantine), len(self.node_ids)) > self.fault_threshold


class Node:
    """One blockchain node: full replica of its shard, light client of the
    others."""

    def __init__(self, node_id: int, shard_id: int, byzantine: bool):
        self.node_id = node_id
        self.shard_id = shard_id
        self.byzantine = byzantine
        self.tables: dict[str, Table] = {}
        self.chain: list[Block] = []
        self.headers: dict[int, list[BlockHeader]] = {}
        self.location: TableLocationTree = TableLocationTree({})
        # staged bulk rows received via shipments: (purpose, table) -> {batch: rows}
        self.staging: dict = {}

    @property
    def height(self) -> int:
        return len(self.chain)

    def schemas(self) -> dict:
        return {name: t.schema for name, t in self.tables.items()}

    def state_digest(self) -> bytes:
        h = self.height
        parts = [self.tables[name].state_digest(h) for name in sorted(self.tables)]
        return sha256(enc_seq(parts))

    def observe_header(self, header: BlockHeader) -> None:
        chain = self.headers.setdefault(header.shard_id, [])
        if header.height == len(chain) + 1:
            chain.append(header)
        elif header.height <= len(chain):
            if chain[header.height - 1] != header:
                raise InternalInvariantError("conflicting header observed")
        else:
            raise InternalInvariantError("header gap in broadcast")

    def apply_block(self, block: Block, env) -> None:
        height = block.header.height
        if height != self.height + 1:
            raise InternalInvariantError(
                f"node {self.node_id} applying height {height} at {self.height}"
            )
        for tx in block.txs:
            self.apply_tx(tx, height, env)
        self.chain.append(block)
        self.observe_header(block.header)

    def apply_tx(self, tx: Transaction, height: int, env) -> None:
        if tx.kind != KIND_DATA:
            return  # queries and controls do not mutate stores directly
        payload = tx.payload
        if isinstance(payload, ShipmentPayload):
            dest = self.staging.setdefault((payload.purpose, payload.table), {})
            dest[payload.batch_index] = payload
            return
        if not isinstance(payload, DmlPayload):
            raise InternalInvariantError(f"unknown data payload {type(payload)}")
        sub_values = env.subquery_values(payload) if payload.subquery else None
        for text in payload.statements:
            stmt = env.parse(text)
            if stmt.table not in self.tables:
                continue  # another involved shard owns this statement's target
            executor.apply_dml(stmt, env.schemas, self.tables,
                               self.location, height, tx.id, sub_values)


class Shard:
    def __init__(self, config: ShardConfig, nodes: list):
        self.config = config
        self.nodes = nodes
        self.shard_id = config.shard_id

    @property
    def honest_nodes(self) -> list:
        return [n for n in self.nodes if not n.byzantine]

    def reference_node(self) -> Node:
        return self.honest_nodes[0]

    def quorum_verdict(self, tx: Transaction, validator, adversary=None):
        """(committed?, reason) under the vote-threshold rule.

        Honest votes are per-node validator verdicts (they can differ for
        control transactions that depend on download progress); Byzantine
        votes come from the adversary, contrarian by default.
        """
        yes = 0
        reason = None
        for node in self.nodes:
            if node.byzantine:
                honest_ok, _ = validator.validate(self.reference_node(), tx)
                vote = (adversary.vote(self.shard_id, node, tx, honest_ok)
                        if adversary is not None else not honest_ok)
            else:
                vote, why = validator.validate(node, tx)
                if not vote and reason is None:
                    reason = why
            yes += 1 if vote else 0
        if yes >= self.config.quorum:
            return True, None
        return False, reason or "quorum-not-reached"

    def height(self) -> int:
        return self.reference_node().height

    def prev_digest(self) -> bytes:
        node = self.reference_node()
        return node.chain[-1].header.digest() if node.chain else GENESIS_DIGEST

    def build_block(self, txs: list, epoch: int) -> Block:
        node = self.reference_node()
        tree = MerkleTree([t.id for t in txs])
        header = BlockHeader(
            shard_id=self.shard_id,
            height=node.height + 1,
            prev_digest=self.prev_digest(),
            tx_root=tree.root,
            location_root=node.location.root,
            epoch=epoch,
        )
        return Block(header, list(txs))

    def commit_block(self, block: Block, env) -> None:
        for node in self.nodes:
            node.apply_block(block, env)

    def spv_proof_for(self, tx: Transaction) -> SpvProof:
        node = self.reference_node()
        for block in reversed(node.chain):
            ids = [t.id for t in block.txs]
            if tx.id in ids:
                tree = block.tx_tree()
                return SpvProof(self.shard_id, block.header.height, tx.id,
                                tree.prove(ids.index(tx.id)))
        raise InternalInvariantError(f"tx {tx.id.hex()[:12]} not committed in shard "
                                     f"{self.shard_id}")
