"""Delegation-based cross-shard queries, their validation, and the
shard-cooperation baseline.

Pipeline (off-chain path): one delegate per related shard; the main
delegate (from the FROM table's shard) collects each sub delegate's
post-pushdown subtree output, evaluates the plan, and produces, per
cross-shard operator, an accumulator proof over the joined/unioned element
columns plus position bitmaps over both input snapshots.  The query
transaction carries the final relation with *row bindings*: base-row
positions per table and the pinned join element per operator.  Each shard
then revalidates what it owns (snapshot accumulation values anchor
freshness; bitmaps, refs and values anchor correctness) while structural
checks over the bindings (membership of every pinned element in the proven
result, per-element cross-product completeness, aggregate recomputation)
are done by every shard.  The client accepts only after SPV proofs from all
related shards bind the identical transaction.

The baseline path ships sub-table rows on-chain, one cross-shard data
transaction per row, then commits a plain query transaction in the main
shard.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import vso
from .bloom import BloomFilter
from .encoding import enc_seq, enc_str, sha256
from .errors import CapacityExceededError, InternalInvariantError, UnsupportedFeatureError
from .field import hash_to_field
from .merkle import spv_check
from .relational import algebra, executor, sql
from .relational.schema import Table, encode_value
from .wire import (KIND_DATA, KIND_QUERY, DmlPayload, OpBundle, QueryPayload,
                   ResultRelation, ResultRow, ShipmentPayload, SideInfo,
                   SubResult, Transaction, WireRow, enc_values)

JOIN_SALT = b"join-domain"
UNION_SALT = b"union-row"


class ElementRegistry:
    """Collision tripwire: the same field element must never stand for two
    different values anywhere in a run."""

    def __init__(self):
        self._seen: dict[int, bytes] = {}

    def check(self, element: int, canonical: bytes) -> int:
        prev = self._seen.get(element)
        if prev is None:
            self._seen[element] = canonical
        elif prev != canonical:
            raise InternalInvariantError(
                f"hash-to-field collision on element {element}"
            )
        return element


def column_element(col_type: str, value, registry: ElementRegistry | None = None) -> int:
    enc = enc_str(col_type) + encode_value(col_type, value)
    e = hash_to_field(JOIN_SALT + enc)
    if registry is not None:
        registry.check(e, enc)
    return e


def row_element(types, values, registry: ElementRegistry | None = None) -> int:
    enc = enc_seq(encode_value(t, v) for t, v in zip(types, values))
    e = hash_to_field(UNION_SALT + enc)
    if registry is not None:
        registry.check(e, enc)
    return e


@dataclass
class DelegateSet:
    main_shard: int
    main_node: int
    sub_nodes: dict  # shard -> node id
    view: int


def select_delegates(related: list, main_shard: int, shards: dict, view: int = 0) -> DelegateSet:
    """Round-robin delegate per related shard; a view change advances the
    index in every shard."""
    picks = {}
    for sid in sorted(related):
        nodes = shards[sid].nodes
        picks[sid] = nodes[view % len(nodes)].node_id
    subs = {sid: nid for sid, nid in picks.items() if sid != main_shard}
    return DelegateSet(main_shard, picks[main_shard], subs, view)


# --- plan structure helpers ---

def related_shards(tree) -> list:
    return sorted(tree.shards)


def check_delegable(tree) -> None:
    """The delegated path supports plans whose only operators above a
    cross-shard operator are projections, aggregates, or further cross-shard
    operators.  Residual multi-table predicates fall back to the baseline."""
    def walk(node, above_cross):
        if isinstance(node, algebra.Sigma) and above_cross:
            raise UnsupportedFeatureError(
                "redisual predicate above a cross-shard operator; "
                "use the shard-cooperation baseline"
            )
        is_cross = isinstance(node, (algebra.JoinOp, algebra.UnionOp)) and node.is_cross
        for child in node.children:
            walk(child, above_cross and not is_cross)
        return

    def mark(node):
        # walk top-down: anything sitting above a cross op in the path
        if isinstance(node, (algebra.JoinOp, algebra.UnionOp)) and node.is_cross:
            return True
        found = False
        for child in node.children:
            if mark(child):
                found = True
        if found and isinstance(node, algebra.Sigma):
            raise UnsupportedFeatureError(
                "residual predicate above a cross-shard operator; "
                "delegated path refuses, use the baseline"
            )
        return found

    mark(tree)


def side_subtrees(op) -> list:
    """(side_index, subtree|upstream_op) for both inputs of a cross op."""
    out = []
    for child in op.children:
        top = algebra.top_cross_op(child)
        if top is None:
            out.append(("subtree", child))
        else:
            out.append(("op", top))
    return out


def subtree_tables(node) -> list:
    if isinstance(node, algebra.Scan):
        return [node.table]
    out = []
    for child in node.children:
        out.extend(subtree_tables(child))
    return out


def subtree_shard(node) -> int:
    shards = node.shards
    if len(shards) != 1:
        raise InternalInvariantError("pure subtree expected")
    return next(iter(shards))


# --- main-delegate evaluation with bindings ---

@dataclass
class MRow:
    values: tuple
    refs: tuple          # ((table, pos), ...)
    ordkey: tuple
    elems: tuple = ()    # ((op_id, elem), ...)


@dataclass
class MRelation:
    columns: list
    types: list
    rows: list  # MRow


def _wrap(rel: executor.Relation) -> MRelation:
    rows = [MRow(r.values, r.refs, r.ordkey) for r in rel.rows]
    return MRelation(list(rel.columns), list(rel.types), rows)


@dataclass
class SideSnapshot:
    """A materialized operator input: deterministic row order defines the
    bitmap positions; elements are the rows' set-element images."""

    origin: str                 # "subtree" | "op"
    shard: int
    op_ref: int
    relation: MRelation
    elements: list              # per-position field element
    tables: tuple = ()          # base tables of a subtree side
    transferred_rows: int = 0   # rows actually sent over the wire (after BF)
    transfer_bytes: int = 0


class QueryAborted(Exception):
    def __init__(self, reason: str, shard: int | None = None):
        self.reason = reason
        self.shard = shard
        super().__init__(reason if shard is None else f"{reason} (shard {shard})")


def _sub_values_from(payloads: list) -> dict:
    return {sr.sub_id: {v[0] for v in sr.values} for sr in payloads}


class QueryPipeline:
    """Executes the delegated protocol for one query at the main node."""

    def __init__(self, env, stmt_text: str, *, use_bloom: bool | None = None,
                 pushdown: bool | None = None):
        self.env = env
        self.text = stmt_text
        self.stmt = env.parse(stmt_text)
        self.use_bloom = env.use_bloom if use_bloom is None else use_bloom
        self.pushdown = env.pushdown if pushdown is None else pushdown
        self.registry = env.registry
        self.stats = {"transfer_bytes": 0, "bloom_bytes": 0, "element_bytes": 0,
                      "proof_cost": 0, "transfer_rows": 0}

    # the validation plan is always the pushed-down plan; the pushdown flag
    # only controls what the sub delegates send (see module docstring)
    def plan(self, locations):
        tree = algebra.plan(self.stmt, self.env.schemas, locations, pushdown=True)
        check_delegable(tree)
        return tree

    def run(self, view: int = 0) -> tuple:
        """Returns (tx, delegates, anchors). Raises QueryAborted on errors
        that abort the pipeline before commit (e.g. capacity overflow)."""
        env = self.env
        locations = env.locations()
        tree = self.plan(locations)
        ops = algebra.cross_operators(tree)
        if not ops:
            raise InternalInvariantError("single-shard query does not need delegation")
        related = related_shards(tree)
        main_shard = locations.shard_of(self.stmt.table)
        delegates = select_delegates(related, main_shard, env.shards, view)
        main_node = env.node(delegates.main_node)
        anchors = tuple(sorted((sid, env.shards[sid].height()) for sid in related))
        anchor_of = dict(anchors)

        sub_results = self._resolve_subqueries(tree, anchor_of)
        sub_values = _sub_values_from(sub_results)

        sides: dict = {}
        bundles = []
        rel = self._evaluate(tree, ops, delegates, anchor_of, sub_values, sides, bundles)

        base_rows = tuple(sorted(
            (ResultRow(r.values, tuple(sorted(r.refs)), tuple(sorted(r.elems)))
             for r in rel.rows),
            key=lambda row: row.to_bytes(),
        ))
        base = ResultRelation(tuple(rel.columns), tuple(rel.types), base_rows)
        final_tree_rel = self._finalize(tree, rel)
        payload = QueryPayload(
            sql=self.text,
            anchors=anchors,
            bundles=tuple(bundles),
            base=env.maybe_blob(base),
            final_values=tuple(r for r in final_tree_rel),
            sub_results=tuple(sub_results),
        )
        tx = Transaction(KIND_QUERY, tuple(related), payload,
                         proposer=delegates.main_node, nonce=env.next_nonce())
        return tx, delegates, anchors

    def _resolve_subqueries(self, tree, anchor_of) -> list:
        out = []
        for pred in algebra.subqueries(tree):
            shards = pred.subplan.shards
            if len(shards) > 1:
                raise UnsupportedFeatureError(
                    "IN subqueries inside SELECT must be single-shard; "
                    "cross-shard subqueries ride on data transactions"
                )
            sid = next(iter(shards))
            node = self.env.node_of_shard(sid)
            rel = executor.execute(pred.subplan, node.tables, anchor_of[sid])
            out.append(SubResult(pred.sub_id, sid,
                                 tuple(r.values for r in rel.rows)))
        return sorted(out, key=lambda s: s.sub_id)

    def _materialize_side(self, subtree, op, side_index, delegates, anchor_of,
                          sub_values, sides) -> SideSnapshot:
        env = self.env
        shard = subtree_shard(subtree)
        owner = env.node(delegates.sub_nodes.get(shard, delegates.main_node))
        height = anchor_of[shard]
        rel = _wrap(executor.execute(subtree, owner.tables, height, sub_values))
        elems = self._side_elements(op, side_index, rel)
        snap = SideSnapshot("subtree", shard, 0, rel, elems,
                            tables=tuple(subtree_tables(subtree)))
        if shard != delegates.main_shard:
            self._account_transfer(op, side_index, snap, sides, owner, height)
        return snap

    def _side_elements(self, op, side_index, rel: MRelation) -> list:
        if isinstance(op, algebra.JoinOp):
            col = op.left_col if side_index == 0 else op.right_col
            idx = rel.columns.index(col)
            return [column_element(op.join_type, r.values[idx], self.registry)
                    for r in rel.rows]
        return [row_element(rel.types, r.values, self.registry) for r in rel.rows]


    def _account_transfer(self, op, side_index, snap: SideSnapshot, sides,
                          owner, height) -> None:
        """Byte accounting for a sub-shard side.

        The element array for the whole post-pushdown snapshot always
        travels (the proof needs the complete column); row payloads are
        thinned by the main side's bloom filter when enabled.  Without
        pushdown the sub ships its raw table rows instead of the subtree
        output.
        """
        rel = snap.relation
        elem_bytes = 8 * len(snap.elements) + 16
        rows_sent = len(rel.rows)
        row_encodings = [enc_values(r.values) for r in rel.rows]
        bloom_bytes = 0
        if self.use_bloom and isinstance(op, algebra.JoinOp):
            main_snap = sides.get((id(op), 1 - side_index))
            if main_snap is not None:
                bf = BloomFilter.from_elements(set(main_snap.elements))
                bloom_bytes = bf.byte_size()
                keep = [i for i, e in enumerate(snap.elements) if e in bf]
                rows_sent = len(keep)
                row_encodings = [row_encodings[i] for i in keep]
        row_bytes = sum(len(b) + 12 for b in row_encodings)
        if not self.pushdown:
            raw_bytes = 0
            for tname in snap.tables:
                table = owner.tables[tname]
                raw_bytes += sum(len(enc_values(r.values)) + 12
                                 for _, r in table.snapshot(height))
            row_bytes = max(row_bytes, raw_bytes)
            rows_sent = sum(len(owner.tables[t].snapshot(height)) for t in snap.tables)
        total = elem_bytes + bloom_bytes + row_bytes
        self.stats["element_bytes"] += elem_bytes
        self.stats["bloom_bytes"] += bloom_bytes
        self.stats["transfer_rows"] += rows_sent
        self.stats["transfer_bytes"] += total
        snap.transferred_rows = rows_sent
        snap.transfer_bytes = total
        self.env.record_transfer(snap.shard, total)

    def _evaluate(self, node, ops, delegates, anchor_of, sub_values, sides, bundles) -> MRelation:
        env = self.env
        if isinstance(node, (algebra.JoinOp, algebra.UnionOp)) and node.is_cross:
            side_specs = side_subtrees(node)
            snaps = []
            # materialize the main-side first so its bloom filter can thin
            # the remote side; specs are (kind, subtree-or-op) per side
            order = sorted(range(2), key=lambda i: side_specs[i][0] == "subtree")
            for i in order:
                kind, ref = side_specs[i]
                if kind == "op":
                    child = node.children[i]
                    inner = self._evaluate(child, ops, delegates, anchor_of,
                                           sub_values, sides, bundles)
                    elems = self._side_elements(node, i, inner)
                    snap = SideSnapshot("op", delegates.main_shard, ref.op_id,
                                        inner, elems)
                else:
                    snap = self._materialize_side(ref, node, i, delegates,
                                                  anchor_of, sub_values, sides)
                sides[(id(node), i)] = snap
            snaps = [sides[(id(node), 0)], sides[(id(node), 1)]]
            return self._prove_op(node, snaps, bundles, anchor_of)
        if isinstance(node, algebra.Sigma):
            raise InternalInvariantError("sigma above cross op should be rejected earlier")
        if isinstance(node, algebra.Pi):
            child = self._evaluate(node.child, ops, delegates, anchor_of,
                                   sub_values, sides, bundles)
            idx = [child.columns.index(c) for c in node.columns]
            rows = [MRow(tuple(r.values[i] for i in idx), r.refs, r.ordkey, r.elems)
                    for r in child.rows]
            return MRelation(list(node.columns), list(node.types), rows)
        if isinstance(node, algebra.AggOp):
            # aggregation happens in _finalize over the base relation
            return self._evaluate(node.child, ops, delegates, anchor_of,
                                  sub_values, sides, bundles)
        # pure subtree reached directly (main-shard side of the bottom op)
        owner = env.node(delegates.main_node)
        rel = executor.execute(node, owner.tables, anchor_of[subtree_shard(node)],
                               sub_values)
        return _wrap(rel)

    def _prove_op(self, op, snaps, bundles, anchor_of) -> MRelation:
        from .field import METER
        keys = self.env.keys
        start_cost = METER.mults
        set_a = sorted(set(snaps[0].elements))
        set_b = sorted(set(snaps[1].elements))
        kind = "join" if isinstance(op, algebra.JoinOp) else "union"
        if kind == "join":
            result, proof = vso.prove_intersection([set_a, set_b], keys)
        else:
            result, proof = vso.prove_union([set_a, set_b], keys)
        accs = [vso.setup(set_a, keys), vso.setup(set_b, keys)]
        in_result = set(result)
        side_infos = []
        for snap, acc in zip(snaps, accs):
            if kind == "join":
                bitmap = tuple(1 if e in in_result else 0 for e in snap.elements)
            else:
                bitmap = tuple(1 for _ in snap.elements)
            side_infos.append(SideInfo(
                origin="table" if snap.origin == "subtree" else "op",
                table=subtree_tables_of(snap),
                shard=snap.shard,
                op_ref=snap.op_ref,
                acc=acc,
                bitmap=bitmap,
            ))
        bundles.append(OpBundle(op.op_id, kind, tuple(side_infos), proof))
        self.stats["proof_cost"] += METER.mults - start_cost

        left, right = snaps
        if kind == "join":
            li = left.relation.columns.index(op.left_col)
            by_elem: dict = {}
            for pos, r in enumerate(right.relation.rows):
                e = right.elements[pos]
                if e in in_result:
                    by_elem.setdefault(e, []).append(r)
            rows = []
            for pos, lr in enumerate(left.relation.rows):
                e = left.elements[pos]
                if e not in in_result:
                    continue
                for rr in by_elem.get(e, ()):
                    rows.append(MRow(
                        lr.values + rr.values,
                        tuple(sorted(lr.refs + rr.refs)),
                        lr.ordkey + rr.ordkey,
                        tuple(sorted(set(lr.elems) | set(rr.elems) | {(op.op_id, e)})),
                    ))
            rel = MRelation(left.relation.columns + right.relation.columns,
                            left.relation.types + right.relation.types, rows)
        else:
            best: dict = {}
            for snap in snaps:
                for pos, r in enumerate(snap.relation.rows):
                    e = snap.elements[pos]
                    key = r.values
                    cur = best.get(key)
                    cand = MRow(r.values, (), r.ordkey, ((op.op_id, e),))
                    if cur is None or (cand.ordkey, cand.values) < (cur.ordkey, cur.values):
                        best[key] = cand
            rel = MRelation(list(left.relation.columns), list(left.relation.types),
                            list(best.values()))
        rel.rows.sort(key=lambda r: (r.ordkey, r.values))
        return rel

    def _finalize(self, tree, rel: MRelation) -> list:
        """Final values from the base relation: aggregate row or the base
        value tuples themselves."""
        if isinstance(tree, algebra.AggOp):
            base_rel = executor.Relation(rel.columns, rel.types,
                                         [executor.ERow(r.values, (), ()) for r in rel.rows])
            values = tuple(executor._aggregate(fn, col, base_rel)
                           for fn, col in tree.specs)
            return [values]
        return [r.values for r in rel.rows]


def subtree_tables_of(snap: SideSnapshot) -> str:
    return snap.tables[0] if snap.tables else ""


# --- validation (runs on every node of every related shard) ---

def _resolve_base(payload: QueryPayload, env):
    if isinstance(payload.base, bytes):
        blob = env.blob_get(payload.base)
        if blob is None:
            return None
        from .encoding import Reader
        return ResultRelation.from_reader(Reader(blob))
    return payload.base


def validate_query_payload(node, payload: QueryPayload, env) -> tuple[bool, str | None]:
    """Full per-shard validation of a delegated query transaction.

    Owner checks (this node's tables): snapshot accumulation values are
    recomputed from the latest local state (freshness), bitmaps are
    recomputed against the proven element result, every result row's base
    references must be marked rows whose actual values match, and at the
    top operator every marked row must surface in the result.  Structural
    checks run regardless of ownership: the set-operation proofs verify,
    every pinned element lies in its proven result, the per-element
    cross-product of观 observed side signatures is complete, and the final
    values re-derive from the base relation.
    """
    try:
        return _validate_query(node, payload, env)
    except (CapacityExceededError, InternalInvariantError) as ex:
        raise
    except Exception as ex:  # malformed payloads must reject, not crash
        return False, f"malformed-payload: {type(ex).__name__}: {ex}"


def _validate_query(node, payload: QueryPayload, env):
    base = _resolve_base(payload, env)
    if base is None:
        return False, "bad-proof: result blob unavailable"
    stmt = env.parse(payload.sql)
    tree = algebra.plan(stmt, env.schemas, node.location, pushdown=True)
    ops = algebra.cross_operators(tree)

    # subquery results: owners re-execute, everyone learns the values
    plan_subs = {p.sub_id: p for p in algebra.subqueries(tree)}
    if set(plan_subs) != {s.sub_id for s in payload.sub_results}:
        return False, "bad-proof: subquery results do not match plan"
    for sr in payload.sub_results:
        pred = plan_subs[sr.sub_id]
        if sr.shard != subtree_shard(pred.subplan):
            return False, "plan-mismatch: subquery shard changed since planning"
        if sr.shard == node.shard_id:
            if not set(subtree_tables(pred.subplan)) <= set(node.tables):
                return False, "stale-snapshot: table in ownership handover"
            rel = executor.execute(pred.subplan, node.tables, node.height)
            if sorted(r.values for r in rel.rows) != sorted(sr.values):
                return False, "wrong-result: subquery result mismatch"
    sub_values = _sub_values_from(payload.sub_results)

    if not payload.bundles:
        return _validate_replayable(node, payload, base, tree, ops, env, sub_values)

    if len(ops) != len(payload.bundles):
        return False, "plan-mismatch: bundle count does not match plan"
    expected_cols = tree.child.columns if isinstance(tree, algebra.AggOp) else tree.columns
    if list(base.columns) != list(expected_cols):
        return False, "wrong-result: base relation columns do not match plan"
    encodings = [row.to_bytes() for row in base.rows]
    if encodings != sorted(encodings) or len(set(encodings)) != len(encodings):
        return False, "wrong-result: base relation not in canonical form"

    anchor_of = dict(payload.anchors)
    if set(anchor_of) != set(related_shards(tree)):
        return False, "plan-mismatch: anchor shards do not match plan"
    if node.shard_id in anchor_of and anchor_of[node.shard_id] > node.height:
        return False, "stale-snapshot: anchor beyond committed height"

    ok, reason = _check_bundles(node, payload, base, ops, sub_values, env)
    if not ok:
        return False, reason

    ok, reason = _structural_checks(payload, base, tree, ops)
    if not ok:
        return False, reason
    return True, None


def _validate_replayable(node, payload, base, tree, ops, env, sub_values=None):
    """No proof bundles: single-shard query (possibly with pre-certified
    foreign subquery results), or the baseline path where all foreign rows
    were previously committed on-chain.

    Owners of a shipped table check the on-chain staged copy against their
    own rows (zero shipped batches attests an empty table).  A node that
    can assemble every plan table (its own plus staged foreign copies)
    re-executes the whole query; a node owning none of the tables accepts
    optimistically — unanimity across the involved shards carries the rest.
    """
    plan_tables = set(subtree_tables(tree))
    owned = {t for t in plan_tables if t in node.tables}
    if not owned:
        return True, None
    tables = dict(node.tables)
    if ops:
        # baseline path: shipped copies must match the owner's latest rows
        for t in sorted(owned):
            staged = staged_table(node, t, env)
            if staged is not None:
                mine = [(r.values, r.txid, r.seq)
                        for _, r in node.tables[t].snapshot(node.height)]
                theirs = [(r.values, r.txid, r.seq)
                          for _, r in staged.snapshot(0)]
                if mine != theirs:
                    return False, "stale-snapshot: shipped rows differ from the table"
    # shipments are committed pairwise {owner, main}, so only the main
    # shard (or a node owning every table) can assemble the full picture;
    # other shards contribute their staged-equality attestation above
    main_shard = node.location.shard_of(env.parse(payload.sql).table)
    if owned != plan_tables and node.shard_id != main_shard:
        return True, None
    for t in plan_tables - owned:
        staged = staged_table(node, t, env)
        if staged is None:
            if not ops:
                return False, "bad-proof: foreign table rows not on chain"
            staged = Table(env.schemas[t])  # attested empty by its owner
        tables[t] = staged
    rel = executor.execute(tree, tables, node.height, sub_values)
    if [r.values for r in rel.rows] != [tuple(v) for v in payload.final_values]:
        return False, "wrong-result: re-execution mismatch"
    return True, None


def staged_table(node, table_name: str, env):
    """Rebuild a foreign table from on-chain shipment batches."""
    batches = node.staging.get(("query", table_name))
    if batches is None:
        return None
    schema = env.schemas[table_name]
    out = Table(schema)
    for idx in sorted(batches):
        for wr in batches[idx].rows:
            row = out.insert(wr.values, wr.txid, 0)
            if not wr.valid:
                out.invalidate(row.seq, 0)
    return out


def _check_bundles(node, payload, base, ops, sub_values, env):
    anchor_of = dict(payload.anchors)
    for op, bundle in zip(ops, payload.bundles):
        if bundle.op_id != op.op_id:
            return False, "bad-proof: operator ids out of order"
        want_kind = "join" if isinstance(op, algebra.JoinOp) else "union"
        if bundle.kind != want_kind:
            return False, "bad-proof: operator kind mismatch"
        if len(bundle.sides) != 2:
            return False, "malformed-proof: wrong side count"
        accs = [s.acc for s in bundle.sides]
        ok, why = vso.verify_set_op(accs, bundle.proof.result, bundle.proof, env.keys)
        if not ok:
            return False, f"forged-proof: {why}"
        in_result = set(bundle.proof.result)
        top = op.op_id == len(ops) - 1
        for side_index, (side, (kind, ref)) in enumerate(zip(bundle.sides, side_subtrees(op))):
            if kind == "op":
                if side.origin != "op" or side.op_ref != ref.op_id:
                    return False, "bad-proof: side origin mismatch"
                continue
            if side.origin != "table":
                return False, "bad-proof: side origin mismatch"
            shard = subtree_shard(ref)
            if side.shard != shard:
                return False, "plan-mismatch: side shard changed since planning"
            if shard != node.shard_id:
                continue  # other shard's side: accumulation taken optimistically
            ok, why = _check_own_side(node, op, side_index, side, ref, in_result,
                                      base, sub_values, top, env)
            if not ok:
                return False, why
    return True, None


def _check_own_side(node, op, side_index, side: SideInfo, subtree, in_result,
                    base, sub_values, top, env):
    if not set(subtree_tables(subtree)) <= set(node.tables):
        return False, "stale-snapshot: table in ownership handover"
    rel = executor.execute(subtree, node.tables, node.height, sub_values)
    if isinstance(op, algebra.JoinOp):
        col = op.left_col if side_index == 0 else op.right_col
        idx = rel.columns.index(col)
        elements = [column_element(op.join_type, r.values[idx], env.registry)
                    for r in rel.rows]
    else:
        elements = [row_element(rel.types, r.values, env.registry) for r in rel.rows]
    recomputed = vso.setup(elements, env.keys)
    if recomputed != side.acc:
        return False, "stale-snapshot: accumulation value differs from latest table"
    if isinstance(op, algebra.JoinOp):
        want_bitmap = tuple(1 if e in in_result else 0 for e in elements)
    else:
        want_bitmap = tuple(1 for _ in elements)
    if len(side.bitmap) != len(want_bitmap):
        # same element set but different row multiplicities: stale snapshot
        return False, "stale-snapshot: snapshot row count changed"
    if tuple(side.bitmap) != want_bitmap:
        return False, "forged-bitmap: position bitmap differs from recomputation"

    local_tables = set(subtree_tables(subtree))
    if isinstance(op, algebra.JoinOp):
        marked_refsets = [frozenset(r.refs) for r, e in zip(rel.rows, elements)
                          if e in in_result]
        base_refsets = [frozenset(row.refs) for row in base.rows]
        for row in base.rows:
            refs = dict(row.refs)
            mine = frozenset((t, p) for t, p in row.refs if t in local_tables)
            if not mine:
                continue
            if not any(mine <= m for m in marked_refsets):
                return False, "wrong-result: row references an unmarked or foreign row"
            ok, why = _check_row_values(node, row, refs, local_tables, base, env)
            if not ok:
                return False, why
            elems = dict(row.join_elems)
            pinned = elems.get(op.op_id)
            jt_col = op.left_col if side_index == 0 else op.right_col
            jt_table = jt_col.split(".")[0]
            if jt_table in local_tables:
                pos = refs.get(jt_table)
                schema = node.tables[jt_table].schema
                actual = node.tables[jt_table].rows[pos].values[
                    schema.index_of(jt_col.split(".")[1])]
                if pinned != column_element(op.join_type, actual, env.registry):
                    return False, "wrong-result: pinned join element mismatch"
        if top:
            for mine in marked_refsets:
                if not any(mine <= b for b in base_refsets):
                    return False, "wrong-result: matching row missing from result"
    else:
        base_values = {row.values for row in base.rows}
        for r in rel.rows:
            if r.values not in base_values:
                return False, "wrong-result: union omits a local row"
    return True, None


def _check_row_values(node, row: ResultRow, refs, local_tables, base, env):
    for ci, col in enumerate(base.columns):
        t, _, c = col.partition(".")
        if t not in local_tables:
            continue
        pos = refs.get(t)
        if pos is None or pos >= len(node.tables[t].rows):
            return False, "wrong-result: missing base reference"
        schema = node.tables[t].schema
        actual = node.tables[t].rows[pos].values[schema.index_of(c)]
        if row.values[ci] != actual:
            return False, "wrong-result: row value differs from the committed row"
    return True, None


def _structural_checks(payload, base, tree, ops):
    final = [tuple(v) for v in payload.final_values]
    if isinstance(tree, algebra.AggOp):
        base_rel = executor.Relation(list(base.columns), list(base.types),
                                     [executor.ERow(r.values, (), ()) for r in base.rows])
        want = [tuple(executor._aggregate(fn, col, base_rel) for fn, col in tree.specs)]
        if final != want:
            return False, "wrong-result: aggregate recomputation mismatch"
    else:
        if sorted(final) != sorted(r.values for r in base.rows):
            return False, "wrong-result: final values do not match base relation"

    for op_index, op in enumerate(ops):
        top = op_index == len(ops) - 1
        if isinstance(op, algebra.UnionOp):
            elems = [row_element(base.types, row.values) for row in base.rows]
            bundle = payload.bundles[op_index]
            if sorted(set(elems)) != sorted(bundle.proof.result):
                return False, "wrong-result: union rows do not match proven result"
            if len(set(r.values for r in base.rows)) != len(base.rows):
                return False, "wrong-result: duplicate union rows"
            continue
        bundle = payload.bundles[op_index]
        in_result = set(bundle.proof.result)
        left_tables = set(subtree_tables(op.left))
        right_tables = set(subtree_tables(op.right))
        groups: dict = {}
        seen_elems = set()
        for row in base.rows:
            elems = dict(row.join_elems)
            e = elems.get(op.op_id)
            if e is None or e not in in_result:
                return False, "wrong-result: row element outside the proven result"
            seen_elems.add(e)
            lsig = tuple(sorted((t, p) for t, p in row.refs if t in left_tables))
            rsig = tuple(sorted((t, p) for t, p in row.refs if t in right_tables))
            g = groups.setdefault(e, (set(), set(), set()))
            g[0].add(lsig)
            g[1].add(rsig)
            g[2].add((lsig, rsig))
        if top and seen_elems != in_result:
            return False, "wrong-result: proven element missing from result rows"
        for e, (lefts, rights, pairs) in groups.items():
            if len(pairs) != len(lefts) * len(rights):
                return False, "wrong-result: join pairs are not a full cross product"
    return True, None


# --- cross-shard DML (nested subqueries, multi-shard batches) ---

def make_dml_tx(env, statements: list, proposer: int) -> Transaction:
    """Build a data transaction for one or more DML statements.

    A cross-shard nested subquery is executed through the delegated query
    pipeline first; its payload rides along as the authentication
    certificate and its result values feed the DML application on the
    target shards.  The transaction involves the target shards plus every
    shard related to the subquery.
    """
    stmts = [env.parse(t) for t in statements]
    locations = env.locations()
    involved = set()
    cert = None
    for stmt in stmts:
        involved.add(locations.shard_of(stmt.table))
        sub_selects = _dml_subqueries(stmt)
        if not sub_selects:
            continue
        if len(sub_selects) > 1 or len(stmts) > 1:
            raise UnsupportedFeatureError(
                "at most one nested subquery per data transaction"
            )
        sub_text = sql.to_text(sub_selects[0])
        subplan = algebra.plan(env.parse(sub_text), env.schemas, locations)
        sub_shards = sorted(subplan.shards)
        involved.update(sub_shards)
        if len(sub_shards) > 1:
            pipeline = QueryPipeline(env, sub_text)
            sub_tx, _delegates, _anchors = pipeline.run()
            cert = sub_tx.payload
        else:
            sid = sub_shards[0]
            owner = env.node_of_shard(sid)
            rel = executor.execute(subplan, owner.tables, owner.height)
            cert = QueryPayload(
                sql=sub_text,
                anchors=((sid, owner.height),),
                bundles=(),
                base=ResultRelation((), (), ()),
                final_values=tuple(r.values for r in rel.rows),
            )
    payload = DmlPayload(tuple(statements), cert)
    return Transaction(KIND_DATA, tuple(sorted(involved)), payload,
                       proposer=proposer, nonce=env.next_nonce())


def _dml_subqueries(stmt) -> list:
    def walk(pred):
        if isinstance(pred, sql.InSub):
            return [pred.select]
        if isinstance(pred, (sql.And, sql.Or)):
            return walk(pred.left) + walk(pred.right)
        if isinstance(pred, sql.Not):
            return walk(pred.inner)
        return []

    if isinstance(stmt, sql.Insert) and stmt.select is not None:
        return []  # INSERT..SELECT sources are handled as local plans
    if isinstance(stmt, (sql.Delete, sql.Update)) and stmt.where is not None:
        return walk(stmt.where)
    return []


def validate_dml_tx(node, tx: Transaction, env) -> tuple[bool, str | None]:
    """Per-shard validation of a data transaction.

    The subquery certificate is validated like a query payload (owners
    deep-check their sides; everyone checks structure), then every
    statement targeting a table of this shard is trial-applied on cloned
    stores to catch schema and key violations deterministically.
    """
    payload = tx.payload
    if not isinstance(payload, DmlPayload):
        return validate_shipment(node, tx, env)
    sub_values = {}
    if payload.subquery is not None:
        ok, reason = validate_query_payload(node, payload.subquery, env)
        if not ok:
            return False, reason
        sub_values = env.subquery_values(payload)
    gate = getattr(env, "dml_gate", None)
    try:
        scratch = None
        for text in payload.statements:
            stmt = env.parse(text)
            target_shard = node.location.shard_of(stmt.table)
            if gate is not None:
                ok, reason = gate(node.shard_id, stmt.table, tx)
                if not ok:
                    return False, reason
            if stmt.table not in node.tables:
                if target_shard == node.shard_id:
                    return False, "bad-metadata: shard does not hold its target table"
                continue
            if scratch is None:
                scratch = {name: t.clone() for name, t in node.tables.items()}
            executor.apply_dml(stmt, env.schemas, scratch, node.location,
                               node.height + 1, tx.id, sub_values)
    except QueryAborted as ex:
        return False, ex.reason
    except Exception as ex:
        return False, f"wrong-result: {type(ex).__name__}: {ex}"
    return True, None


def validate_shipment(node, tx: Transaction, env) -> tuple[bool, str | None]:
    payload = tx.payload
    if not isinstance(payload, ShipmentPayload):
        return False, "malformed-payload: unknown data payload"
    if node.shard_id != payload.source_shard:
        return True, None  # destination trusts the source quorum
    table = node.tables.get(payload.table)
    if table is None:
        return False, "bad-metadata: source does not hold the shipped table"
    if payload.purpose == "query":
        expected = [WireRow(r.values, r.txid, r.seq, True)
                    for _, r in table.snapshot(payload.anchor_height)]
    else:
        expected = [WireRow(r.values, r.txid, r.seq, r.valid_at(payload.anchor_height))
                    for r in table.rows if r.created_height <= payload.anchor_height]
    lo = payload.batch_index * payload.batch_size
    if list(payload.rows) != expected[lo:lo + payload.batch_size]:
        return False, "wrong-result: shipped rows differ from the committed table"
    return True, None


# --- shard-cooperation baseline (on-chain strawman) ---

class StrawmanQuery:
    """Ships every foreign row on-chain, then commits a plain query tx in
    the main shard; functionally equivalent to the delegated path but with
    on-chain bytes proportional to the tables."""

    def __init__(self, env, stmt_text: str):
        self.env = env
        self.text = stmt_text
        self.stmt = env.parse(stmt_text)
        locations = env.locations()
        self.tree = algebra.plan(self.stmt, env.schemas, locations, pushdown=True)
        self.main_shard = locations.shard_of(self.stmt.table)
        self.related = related_shards(self.tree)

    def shipment_txs(self, proposer: int) -> list:
        """One cross-shard data transaction per foreign row."""
        env = self.env
        txs = []
        for table in sorted(set(subtree_tables(self.tree))):
            shard = env.locations().shard_of(table)
            if shard == self.main_shard:
                continue
            owner = env.node_of_shard(shard)
            height = owner.height
            rows = [WireRow(r.values, r.txid, r.seq, True)
                    for _, r in owner.tables[table].snapshot(height)]
            batch = env.shipment_batch
            for i in range(0, max(len(rows), 0), batch):
                payload = ShipmentPayload(table, shard, "query", i // batch,
                                          batch, height, tuple(rows[i:i + batch]))
                txs.append(Transaction(
                    KIND_DATA, tuple(sorted({shard, self.main_shard})), payload,
                    proposer=proposer, nonce=env.next_nonce()))
        return txs

    def query_tx(self, proposer: int) -> Transaction:
        """Built after all shipments committed: main-shard-only query tx."""
        env = self.env
        node = env.node_of_shard(self.main_shard)
        tables = dict(node.tables)
        for t in set(subtree_tables(self.tree)):
            if t not in tables:
                staged = staged_table(node, t, env)
                tables[t] = staged if staged is not None else Table(env.schemas[t])
        rel = executor.execute(self.tree, tables, node.height)
        anchors = tuple(sorted((sid, env.shards[sid].height())
                               for sid in self.related))
        payload = QueryPayload(
            sql=self.text,
            anchors=anchors,
            bundles=(),
            base=ResultRelation((), (), ()),
            final_values=tuple(r.values for r in rel.rows),
        )
        return Transaction(KIND_QUERY, tuple(self.related), payload,
                           proposer=proposer, nonce=env.next_nonce())


def make_simple_query_tx(env, stmt_text: str, proposer: int) -> Transaction:
    """Query tx for plans without cross-shard operators.

    Foreign single-shard IN-subqueries are resolved by their owners and
    attached as sub-results; the whole tx then involves the main shard plus
    every subquery shard, each of which revalidates its part.
    """
    stmt = env.parse(stmt_text)
    locations = env.locations()
    tree = algebra.plan(stmt, env.schemas, locations, pushdown=True)
    if algebra.cross_operators(tree):
        raise InternalInvariantError("plan has cross-shard operators")
    main_shard = locations.shard_of(stmt.table)
    related = {main_shard}
    sub_results = []
    for pred in algebra.subqueries(tree):
        sid = subtree_shard(pred.subplan)
        related.add(sid)
        owner = env.node_of_shard(sid)
        rel = executor.execute(pred.subplan, owner.tables, owner.height)
        sub_results.append(SubResult(pred.sub_id, sid,
                                     tuple(r.values for r in rel.rows)))
    sub_results.sort(key=lambda s: s.sub_id)
    sub_values = _sub_values_from(sub_results)
    node = env.node_of_shard(main_shard)
    rel = executor.execute(tree, node.tables, node.height, sub_values)
    anchors = tuple(sorted((sid, env.shards[sid].height()) for sid in related))
    payload = QueryPayload(
        sql=stmt_text, anchors=anchors, bundles=(),
        base=ResultRelation((), (), ()),
        final_values=tuple(r.values for r in rel.rows),
        sub_results=tuple(sub_results),
    )
    return Transaction(KIND_QUERY, tuple(sorted(related)), payload,
                       proposer=proposer, nonce=env.next_nonce())
