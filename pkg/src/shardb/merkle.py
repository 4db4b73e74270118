"""Merkle trees, block headers, SPV checks, and the table-location tree.

Digest conventions: leaf nodes are sha256(0x00 || sha256(leaf_bytes)),
internal nodes sha256(0x01 || left || right).  The domain-separation byte
keeps leaf data from colliding with internal nodes.  A level with an odd
node count duplicates its last node.
"""

from __future__ import annotations

from dataclasses import dataclass

from .encoding import Reader, enc_bytes, enc_seq, enc_str, enc_u8, enc_u32, enc_u64, sha256
from .errors import EmptyTreeError, UnknownTableError

_LEAF = b"\x00"
_NODE = b"\x01"


def leaf_digest(leaf: bytes) -> bytes:
    return sha256(_LEAF + sha256(leaf))


def node_digest(left: bytes, right: bytes) -> bytes:
    return sha256(_NODE + left + right)


class MerkleTree:
    """Binary hash tree over an ordered list of byte-string leaves."""

    def __init__(self, leaves: list[bytes]):
        if not leaves:
            raise EmptyTreeError("merkle tree needs at least one leaf")
        self.leaves = list(leaves)
        levels = [[leaf_digest(l) for l in leaves]]
        while len(levels[-1]) > 1:
            cur = levels[-1]
            nxt = []
            for i in range(0, len(cur), 2):
                left = cur[i]
                right = cur[i + 1] if i + 1 < len(cur) else cur[i]
                nxt.append(node_digest(left, right))
            levels.append(nxt)
        self.levels = levels
        self.root = levels[-1][0]

    def prove(self, index: int) -> "MerkleProof":
        if not 0 <= index < len(self.leaves):
            raise IndexError(f"leaf index {index} out of range")
        path = []
        pos = index
        for level in self.levels[:-1]:
            sibling = pos ^ 1
            if sibling >= len(level):
                sibling = pos  # duplicated last node
            path.append((level[sibling], sibling < pos))
            pos //= 2
        return MerkleProof(index, path, self.root)


@dataclass
class MerkleProof:
    index: int
    path: list  # [(digest, sibling_is_left)]
    root: bytes

    def to_bytes(self) -> bytes:
        return (
            enc_u32(self.index)
            + enc_seq(enc_bytes(d) + enc_u8(1 if left else 0) for d, left in self.path)
            + enc_bytes(self.root)
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "MerkleProof":
        index = r.u32()
        path = r.seq(lambda rr: (rr.bytes_(), rr.u8() == 1))
        return cls(index, path, r.bytes_())


def verify_leaf(leaf: bytes, proof: MerkleProof) -> bool:
    """Accept iff hashing the leaf up the sibling path reproduces the root."""
    digest = leaf_digest(leaf)
    for sibling, sibling_is_left in proof.path:
        if sibling_is_left:
            digest = node_digest(sibling, digest)
        else:
            digest = node_digest(digest, sibling)
    return digest == proof.root


@dataclass(frozen=True)
class BlockHeader:
    shard_id: int
    height: int
    prev_digest: bytes
    tx_root: bytes
    location_root: bytes
    epoch: int

    def to_bytes(self) -> bytes:
        return (
            enc_u64(self.shard_id)
            + enc_u64(self.height)
            + enc_bytes(self.prev_digest)
            + enc_bytes(self.tx_root)
            + enc_bytes(self.location_root)
            + enc_u64(self.epoch)
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "BlockHeader":
        return cls(r.u64(), r.u64(), r.bytes_(), r.bytes_(), r.bytes_(), r.u64())

    def digest(self) -> bytes:
        return sha256(self.to_bytes())


GENESIS_DIGEST = b"\x00" * 32


def check_header_chain(headers: list[BlockHeader]) -> bool:
    """Heights run 1..n (0 is the genesis state) and each header links its
    predecessor."""
    prev = GENESIS_DIGEST
    for i, h in enumerate(headers):
        if h.height != i + 1 or h.prev_digest != prev:
            return False
        prev = h.digest()
    return True


class TableLocationTree:
    """Replicated table-name -> shard-id map, committed as Merkle leaves
    sorted by table name so every honest node derives the same root."""

    def __init__(self, placement: dict[str, int]):
        self.placement = dict(placement)
        self._names = sorted(self.placement)
        if self._names:
            leaves = [self._leaf(n) for n in self._names]
            self._tree = MerkleTree(leaves)
            self.root = self._tree.root
        else:
            self._tree = None
            self.root = GENESIS_DIGEST

    def _leaf(self, name: str) -> bytes:
        return enc_str(name) + enc_u64(self.placement[name])

    def lookup(self, name: str) -> tuple[int, MerkleProof]:
        if name not in self.placement:
            raise UnknownTableError(f"table {name!r} not in location tree")
        index = self._names.index(name)
        return self.placement[name], self._tree.prove(index)

    def shard_of(self, name: str) -> int:
        if name not in self.placement:
            raise UnknownTableError(f"table {name!r} not in location tree")
        return self.placement[name]

    def with_move(self, name: str, shard: int) -> "TableLocationTree":
        placement = dict(self.placement)
        placement[name] = shard
        return TableLocationTree(placement)

    def verify_entry(self, name: str, shard: int, proof: MerkleProof, root: bytes) -> bool:
        leaf = enc_str(name) + enc_u64(shard)
        return proof.root == root and verify_leaf(leaf, proof)


@dataclass
class SpvProof:
    """Binds one transaction digest into one shard's committed block."""

    shard_id: int
    height: int
    tx_digest: bytes
    proof: MerkleProof

    def to_bytes(self) -> bytes:
        return (
            enc_u64(self.shard_id)
            + enc_u64(self.height)
            + enc_bytes(self.tx_digest)
            + self.proof.to_bytes()
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "SpvProof":
        return cls(r.u64(), r.u64(), r.bytes_(), MerkleProof.from_reader(r))


def spv_check(tx_digest: bytes, header_chains: dict, proofs: dict,
              required_shards) -> tuple[bool, str | None]:
    """Light-client acceptance of a (cross-shard) transaction.

    Accepts iff every required shard has a proof binding the *same* digest
    into one of that shard's committed headers.  A main node that sent
    different copies to different shards surfaces as inconsistent-copies.
    """
    for shard in sorted(required_shards):
        sp = proofs.get(shard)
        if sp is None:
            return False, f"incomplete: no proof for shard {shard}"
        if sp.tx_digest != tx_digest:
            return False, f"inconsistent-copies: shard {shard} committed a different digest"
        chain = header_chains.get(shard)
        if chain is None or not 1 <= sp.height <= len(chain):
            return False, f"incomplete: no committed header at shard {shard} height {sp.height}"
        header = chain[sp.height - 1]
        if sp.proof.root != header.tx_root:
            return False, f"bad-proof: root mismatch against shard {shard} header"
        if not verify_leaf(tx_digest, sp.proof):
            return False, f"bad-proof: membership check failed for shard {shard}"
    return True, None
