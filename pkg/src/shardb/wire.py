"""Transactions, payloads, and their canonical wire encodings.

Everything that is committed to a ledger, gossiped, or dumped into the
binary transcript round-trips through these encoders.  Transaction ids are
sha256 over the canonical encoding, so two nodes agree on an id iff they
agree on every byte of the payload.

Values inside rows are type-tagged (int vs string) so encodings never
depend on schema lookup.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .encoding import (Reader, enc_bytes, enc_i64, enc_seq, enc_str, enc_u8,
                       enc_u32, enc_u64, sha256)
from .vso import AccumulationValue, SetOpProof

KIND_DATA = "data"
KIND_QUERY = "query"
KIND_CONTROL = "control"


def enc_value(v) -> bytes:
    if isinstance(v, bool):
        raise TypeError("bool is not a wire value")
    if isinstance(v, int):
        return enc_u8(1) + enc_i64(v)
    if isinstance(v, str):
        return enc_u8(2) + enc_str(v)
    raise TypeError(f"cannot encode value {v!r}")


def dec_value(r: Reader):
    tag = r.u8()
    if tag == 1:
        return r.i64()
    if tag == 2:
        return r.str_()
    raise ValueError(f"bad value tag {tag}")


def enc_values(values) -> bytes:
    return enc_seq(enc_value(v) for v in values)


def dec_values(r: Reader) -> tuple:
    return tuple(r.seq(dec_value))


# --- rows on the wire ---

@dataclass(frozen=True)
class WireRow:
    """Full row state shipped between shards (strawman paths, migration)."""

    values: tuple
    txid: bytes
    seq: int
    valid: bool

    def to_bytes(self) -> bytes:
        return (enc_values(self.values) + enc_bytes(self.txid)
                + enc_u64(self.seq) + enc_u8(1 if self.valid else 0))

    @classmethod
    def from_reader(cls, r: Reader) -> "WireRow":
        return cls(dec_values(r), r.bytes_(), r.u64(), r.u8() == 1)


@dataclass(frozen=True)
class ResultRow:
    """One result-relation row with its validation bindings: positions of
    the base rows it combines and the join element pinned per cross-shard
    operator."""

    values: tuple
    refs: tuple = ()        # ((table, base_position), ...) sorted
    join_elems: tuple = ()  # ((op_id, field_element), ...) sorted

    def to_bytes(self) -> bytes:
        return (
            enc_values(self.values)
            + enc_seq(enc_str(t) + enc_u64(p) for t, p in self.refs)
            + enc_seq(enc_u32(op) + enc_u64(e) for op, e in self.join_elems)
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "ResultRow":
        values = dec_values(r)
        refs = tuple(r.seq(lambda rr: (rr.str_(), rr.u64())))
        elems = tuple(r.seq(lambda rr: (rr.u32(), rr.u64())))
        return cls(values, refs, elems)


@dataclass(frozen=True)
class ResultRelation:
    columns: tuple
    types: tuple
    rows: tuple  # ResultRow tuple

    def to_bytes(self) -> bytes:
        return (
            enc_seq(enc_str(c) for c in self.columns)
            + enc_seq(enc_str(t) for t in self.types)
            + enc_seq(row.to_bytes() for row in self.rows)
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "ResultRelation":
        cols = tuple(r.seq(lambda rr: rr.str_()))
        types = tuple(r.seq(lambda rr: rr.str_()))
        rows = tuple(r.seq(ResultRow.from_reader))
        return cls(cols, types, rows)

    def value_rows(self) -> list:
        return [row.values for row in self.rows]


# --- cross-shard query proof bundles ---

@dataclass(frozen=True)
class SideInfo:
    """One input side of a cross-shard operator: where its snapshot comes
    from, the accumulation value claimed for its element column, and the
    position bitmap over that snapshot."""

    origin: str          # "table" | "op"
    table: str           # table name, or "" for op origin
    shard: int           # owning shard for table origin, else main shard
    op_ref: int          # upstream operator id for op origin, else 0
    acc: AccumulationValue
    bitmap: tuple        # 0/1 per snapshot position

    def to_bytes(self) -> bytes:
        return (
            enc_u8(0 if self.origin == "table" else 1)
            + enc_str(self.table)
            + enc_u64(self.shard)
            + enc_u32(self.op_ref)
            + self.acc.to_bytes()
            + enc_seq(enc_u8(b) for b in self.bitmap)
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "SideInfo":
        origin = "table" if r.u8() == 0 else "op"
        table = r.str_()
        shard = r.u64()
        op_ref = r.u32()
        acc = AccumulationValue.from_reader(r)
        bitmap = tuple(r.seq(lambda rr: rr.u8()))
        return cls(origin, table, shard, op_ref, acc, bitmap)


@dataclass(frozen=True)
class OpBundle:
    """Per cross-shard operator: accumulation values and bitmaps for both
    sides plus the set-operation proof (which carries the element result)."""

    op_id: int
    kind: str  # "join" | "union"
    sides: tuple  # (SideInfo, SideInfo)
    proof: SetOpProof

    def to_bytes(self) -> bytes:
        return (
            enc_u32(self.op_id)
            + enc_u8(0 if self.kind == "join" else 1)
            + enc_seq(s.to_bytes() for s in self.sides)
            + enc_bytes(self.proof.to_bytes())
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "OpBundle":
        op_id = r.u32()
        kind = "join" if r.u8() == 0 else "union"
        sides = tuple(r.seq(SideInfo.from_reader))
        proof = SetOpProof.from_reader(Reader(r.bytes_()))
        return cls(op_id, kind, sides, proof)


@dataclass(frozen=True)
class SubResult:
    """Materialized single-shard IN-subquery result, revalidated by the
    shard that owns the subquery's tables."""

    sub_id: int
    shard: int
    values: tuple  # tuple of single-value tuples

    def to_bytes(self) -> bytes:
        return (enc_u32(self.sub_id) + enc_u64(self.shard)
                + enc_seq(enc_values(v) for v in self.values))

    @classmethod
    def from_reader(cls, r: Reader) -> "SubResult":
        return cls(r.u32(), r.u64(), tuple(r.seq(dec_values)))


@dataclass(frozen=True)
class QueryPayload:
    sql: str
    anchors: tuple            # ((shard, height), ...) sorted
    bundles: tuple            # OpBundle tuple
    base: "ResultRelation | bytes"   # inline relation or blob digest
    final_values: tuple       # value tuples after aggregation/projection
    sub_results: tuple = ()   # SubResult tuple

    def to_bytes(self) -> bytes:
        if isinstance(self.base, bytes):
            base = enc_u8(1) + enc_bytes(self.base)
        else:
            base = enc_u8(0) + enc_bytes(self.base.to_bytes())
        return (
            enc_str(self.sql)
            + enc_seq(enc_u64(s) + enc_u64(h) for s, h in self.anchors)
            + enc_seq(b.to_bytes() for b in self.bundles)
            + base
            + enc_seq(enc_values(v) for v in self.final_values)
            + enc_seq(s.to_bytes() for s in self.sub_results)
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "QueryPayload":
        sql = r.str_()
        anchors = tuple(r.seq(lambda rr: (rr.u64(), rr.u64())))
        bundles = tuple(r.seq(OpBundle.from_reader))
        if r.u8() == 1:
            base = r.bytes_()
        else:
            base = ResultRelation.from_reader(Reader(r.bytes_()))
        final_values = tuple(r.seq(dec_values))
        subs = tuple(r.seq(SubResult.from_reader))
        return cls(sql, anchors, bundles, base, final_values, subs)


@dataclass(frozen=True)
class DmlPayload:
    statements: tuple  # SQL texts, applied in order and atomically
    subquery: QueryPayload | None = None

    def to_bytes(self) -> bytes:
        out = enc_seq(enc_str(s) for s in self.statements)
        if self.subquery is None:
            return out + enc_u8(0)
        return out + enc_u8(1) + enc_bytes(self.subquery.to_bytes())

    @classmethod
    def from_reader(cls, r: Reader) -> "DmlPayload":
        stmts = tuple(r.seq(lambda rr: rr.str_()))
        sub = None
        if r.u8() == 1:
            sub = QueryPayload.from_reader(Reader(r.bytes_()))
        return cls(stmts, sub)


@dataclass(frozen=True)
class ShipmentPayload:
    """On-chain bulk rows: strawman query transfer and stop-restart
    migration batches."""

    table: str
    source_shard: int
    purpose: str  # "query" | "migration"
    batch_index: int
    batch_size: int
    anchor_height: int
    rows: tuple  # WireRow tuple

    def to_bytes(self) -> bytes:
        return (
            enc_str(self.table)
            + enc_u64(self.source_shard)
            + enc_u8(0 if self.purpose == "query" else 1)
            + enc_u32(self.batch_index)
            + enc_u32(self.batch_size)
            + enc_u64(self.anchor_height)
            + enc_seq(row.to_bytes() for row in self.rows)
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "ShipmentPayload":
        return cls(r.str_(), r.u64(), "query" if r.u8() == 0 else "migration",
                   r.u32(), r.u32(), r.u64(), tuple(r.seq(WireRow.from_reader)))


# --- control payloads ---

@dataclass(frozen=True)
class MigrationInit:
    table: str
    source: int
    dest: int
    metadata: bytes  # digest of the table at the checkpoint
    checkpoint_height: int

    def to_bytes(self) -> bytes:
        return (enc_u8(0) + enc_str(self.table) + enc_u64(self.source)
                + enc_u64(self.dest) + enc_bytes(self.metadata)
                + enc_u64(self.checkpoint_height))


@dataclass(frozen=True)
class MigrationComplete:
    table: str
    source: int
    dest: int

    def to_bytes(self) -> bytes:
        return (enc_u8(1) + enc_str(self.table)
                + enc_u64(self.source) + enc_u64(self.dest))


@dataclass(frozen=True)
class MigrationCount:
    table: str
    source: int
    dest: int
    total: int

    def to_bytes(self) -> bytes:
        return (enc_u8(2) + enc_str(self.table) + enc_u64(self.source)
                + enc_u64(self.dest) + enc_u64(self.total))


@dataclass(frozen=True)
class MigrationEnd:
    """Stop-restart strawman end marker."""

    table: str
    source: int
    dest: int
    total_batches: int

    def to_bytes(self) -> bytes:
        return (enc_u8(3) + enc_str(self.table) + enc_u64(self.source)
                + enc_u64(self.dest) + enc_u64(self.total_batches))


@dataclass(frozen=True)
class DemandReport:
    epoch: int
    shard: int
    demands: tuple  # ((table, count), ...) sorted by table

    def to_bytes(self) -> bytes:
        return (enc_u8(4) + enc_u64(self.epoch) + enc_u64(self.shard)
                + enc_seq(enc_str(t) + enc_u64(c) for t, c in self.demands))


@dataclass(frozen=True)
class PlanningStrategy:
    epoch: int
    moves: tuple      # ((table, source, dest), ...)
    placement: tuple  # ((table, shard), ...) resulting map, sorted

    def to_bytes(self) -> bytes:
        return (
            enc_u8(5) + enc_u64(self.epoch)
            + enc_seq(enc_str(t) + enc_u64(s) + enc_u64(d) for t, s, d in self.moves)
            + enc_seq(enc_str(t) + enc_u64(s) for t, s in self.placement)
        )


def _control_from_reader(r: Reader):
    tag = r.u8()
    if tag == 0:
        return MigrationInit(r.str_(), r.u64(), r.u64(), r.bytes_(), r.u64())
    if tag == 1:
        return MigrationComplete(r.str_(), r.u64(), r.u64())
    if tag == 2:
        return MigrationCount(r.str_(), r.u64(), r.u64(), r.u64())
    if tag == 3:
        return MigrationEnd(r.str_(), r.u64(), r.u64(), r.u64())
    if tag == 4:
        return DemandReport(r.u64(), r.u64(),
                            tuple(r.seq(lambda rr: (rr.str_(), rr.u64()))))
    if tag == 5:
        return PlanningStrategy(
            r.u64(),
            tuple(r.seq(lambda rr: (rr.str_(), rr.u64(), rr.u64()))),
            tuple(r.seq(lambda rr: (rr.str_(), rr.u64()))),
        )
    raise ValueError(f"bad control tag {tag}")


_PAYLOAD_TAGS = {
    DmlPayload: 0,
    ShipmentPayload: 1,
    QueryPayload: 2,
}


@dataclass(frozen=True)
class Transaction:
    kind: str  # data | query | control
    involved: tuple  # sorted shard ids
    payload: object
    proposer: int
    nonce: int
    dual_seq: int | None = None
    _id: bytes = field(default=b"", compare=False, repr=False)

    def to_bytes(self) -> bytes:
        if self.kind == KIND_CONTROL:
            body = enc_u8(3) + self.payload.to_bytes()
        else:
            body = enc_u8(_PAYLOAD_TAGS[type(self.payload)]) + self.payload.to_bytes()
        seq = enc_u8(0) if self.dual_seq is None else enc_u8(1) + enc_u64(self.dual_seq)
        return (
            enc_str(self.kind)
            + enc_seq(enc_u64(s) for s in self.involved)
            + enc_bytes(body)
            + enc_u64(self.proposer)
            + enc_u64(self.nonce)
            + seq
        )

    @classmethod
    def from_reader(cls, r: Reader) -> "Transaction":
        kind = r.str_()
        involved = tuple(r.seq(lambda rr: rr.u64()))
        body = Reader(r.bytes_())
        tag = body.u8()
        if tag == 0:
            payload = DmlPayload.from_reader(body)
        elif tag == 1:
            payload = ShipmentPayload.from_reader(body)
        elif tag == 2:
            payload = QueryPayload.from_reader(body)
        elif tag == 3:
            payload = _control_from_reader(body)
        else:
            raise ValueError(f"bad payload tag {tag}")
        proposer = r.u64()
        nonce = r.u64()
        dual_seq = r.u64() if r.u8() == 1 else None
        return cls(kind, involved, payload, proposer, nonce, dual_seq)

    @property
    def id(self) -> bytes:
        if not self._id:
            object.__setattr__(self, "_id", sha256(self.to_bytes()))
        return self._id

    def with_dual_seq(self, seq: int) -> "Transaction":
        return Transaction(self.kind, self.involved, self.payload,
                           self.proposer, self.nonce, seq)

    def byte_size(self) -> int:
        return len(self.to_bytes())
