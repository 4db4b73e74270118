"""Relational-algebra plans with per-operator shard tags.

Plans are left-deep trees of Scan / Sigma / Pi / JoinOp / UnionOp / AggOp.
Columns are qualified "table.column" strings throughout.  A join or union
whose inputs live in different shards is a cross-shard operator; those get
dense ids in bottom-up execution order, and each of their two sides is
classified as either a pure intra-shard subtree (the side some shard can
rematerialize locally) or the output of an earlier cross-shard operator.

Pushdown moves single-table WHERE conjuncts and column pruning below the
joins, which is what bounds both the off-chain transfer and the snapshot a
validating shard has to rebuild.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import SchemaError, SqlError, UnknownTableError, UnsupportedFeatureError
from . import sql
from .schema import Schema

# --- bound predicates ---

@dataclass(frozen=True)
class BCmp:
    column: str
    op: str
    value: object = None
    other_column: str | None = None


@dataclass(frozen=True)
class BIn:
    column: str
    sub_id: int
    subplan: object


@dataclass(frozen=True)
class BAnd:
    left: object
    right: object


@dataclass(frozen=True)
class BOr:
    left: object
    right: object


@dataclass(frozen=True)
class BNot:
    inner: object


# --- plan nodes ---

@dataclass
class Scan:
    table: str
    shard: int
    columns: list
    types: list

    @property
    def shards(self):
        return frozenset([self.shard])

    children = ()


@dataclass
class Sigma:
    pred: object
    child: object

    @property
    def columns(self):
        return self.child.columns

    @property
    def types(self):
        return self.child.types

    @property
    def shards(self):
        return self.child.shards

    @property
    def children(self):
        return (self.child,)


@dataclass
class Pi:
    columns: list
    types: list
    child: object

    @property
    def shards(self):
        return self.child.shards

    @property
    def children(self):
        return (self.child,)


@dataclass
class JoinOp:
    left: object
    right: object
    left_col: str
    right_col: str
    join_type: str  # column type of the join domain
    op_id: int | None = None  # set for cross-shard operators only

    @property
    def columns(self):
        return self.left.columns + self.right.columns

    @property
    def types(self):
        return self.left.types + self.right.types

    @property
    def shards(self):
        return self.left.shards | self.right.shards

    @property
    def is_cross(self):
        return len(self.shards) > 1

    @property
    def children(self):
        return (self.left, self.right)


@dataclass
class UnionOp:
    left: object
    right: object
    op_id: int | None = None

    @property
    def columns(self):
        return self.left.columns

    @property
    def types(self):
        return self.left.types

    @property
    def shards(self):
        return self.left.shards | self.right.shards

    @property
    def is_cross(self):
        return len(self.shards) > 1

    @property
    def children(self):
        return (self.left, self.right)


@dataclass
class AggOp:
    specs: list  # [(fn, qualified column | None)]
    columns: list
    types: list
    child: object

    @property
    def shards(self):
        return self.child.shards

    @property
    def children(self):
        return (self.child,)


_AGG_TYPE = {"count": "int", "avg": "decimal"}


class _Binder:
    """Resolves column references against the tables in scope."""

    def __init__(self, schemas: dict, tables: list):
        self.schemas = schemas
        self.tables = tables

    def resolve(self, ref: sql.ColRef) -> tuple[str, str]:
        if ref.table is not None:
            if ref.table not in self.tables:
                raise SqlError(f"table {ref.table!r} not in FROM clause", ref.offset)
            self.schemas[ref.table].column_type(ref.column)
            return f"{ref.table}.{ref.column}", self.schemas[ref.table].column_type(ref.column)
        hits = [t for t in self.tables if ref.column in self.schemas[t].column_names]
        if not hits:
            raise SqlError(f"unknown column {ref.column!r}", ref.offset)
        if len(hits) > 1:
            raise SqlError(f"ambiguous column {ref.column!r} (in {hits})", ref.offset)
        return f"{hits[0]}.{ref.column}", self.schemas[hits[0]].column_type(ref.column)


def coerce_literal(lit: sql.Literal, col_type: str):
    """Convert a parsed literal to the column's internal representation."""
    if col_type == "int":
        if lit.kind != "int":
            raise SchemaError(f"expected int literal, got {lit.kind}")
        return lit.value
    if col_type == "decimal":
        if lit.kind == "int":
            return lit.value * 100
        if lit.kind == "decimal":
            return lit.value
        raise SchemaError(f"expected numeric literal, got {lit.kind}")
    if col_type == "string":
        if lit.kind != "string":
            raise SchemaError(f"expected string literal, got {lit.kind}")
        return lit.value
    if col_type == "date":
        if lit.kind != "string":
            raise SchemaError(f"expected date string literal, got {lit.kind}")
        from .schema import _DATE_RE
        if not _DATE_RE.match(lit.value):
            raise SchemaError(f"bad date literal {lit.value!r}")
        return lit.value
    raise SchemaError(f"unknown column type {col_type}")


class _PlanBuilder:
    def __init__(self, schemas, locations, pushdown: bool):
        self.schemas = schemas
        self.locations = locations
        self.pushdown = pushdown
        self._sub_counter = 0

    def build_select(self, stmt: sql.Select):
        tables = [stmt.table] + [j.table for j in stmt.joins]
        for t in tables:
            if t not in self.schemas:
                raise UnknownTableError(f"unknown table {t!r}")
        if len(set(tables)) != len(tables):
            raise UnsupportedFeatureError("self-joins (repeated tables) are not supported")
        binder = _Binder(self.schemas, tables)

        # Output columns.
        if stmt.star:
            out_cols = [f"{t}.{c}" for t in tables for c in self.schemas[t].column_names]
        elif stmt.aggregates:
            out_cols = []
        else:
            out_cols = [binder.resolve(c)[0] for c in stmt.columns]

        joins = []
        seen = [stmt.table]
        for j in stmt.joins:
            lcol, ltype = binder.resolve(j.left)
            rcol, rtype = binder.resolve(j.right)
            # orient: right side must belong to the newly joined table
            if lcol.split(".")[0] == j.table:
                lcol, rcol = rcol, lcol
                ltype, rtype = rtype, ltype
            if rcol.split(".")[0] != j.table:
                raise SqlError(f"join condition must reference {j.table!r}")
            if lcol.split(".")[0] not in seen:
                raise SqlError(f"join condition references {lcol!r} before it is joined")
            if ltype != rtype:
                raise SchemaError(f"join column types differ: {lcol}:{ltype} vs {rcol}:{rtype}")
            joins.append((j.table, lcol, rcol, ltype))
            seen.append(j.table)

        where = self._bind_pred(stmt.where, binder) if stmt.where else None
        conjuncts = _split_and(where) if where else []

        # Per-table selections (pushdown) and residual predicates.
        per_table: dict[str, list] = {t: [] for t in tables}
        residual = []
        for c in conjuncts:
            ts = _pred_tables(c)
            if self.pushdown and len(ts) == 1:
                per_table[next(iter(ts))].append(c)
            else:
                residual.append(c)

        # Needed columns per table (output + joins + all predicates).
        needed: dict[str, set] = {t: set() for t in tables}
        for col in out_cols:
            needed[col.split(".")[0]].add(col)
        for _, lcol, rcol, _t in joins:
            needed[lcol.split(".")[0]].add(lcol)
            needed[rcol.split(".")[0]].add(rcol)
        for c in conjuncts:
            for col in _pred_columns(c):
                needed[col.split(".")[0]].add(col)
        for spec in stmt.aggregates:
            if spec.column is not None:
                col, _ = binder.resolve(spec.column)
                needed[col.split(".")[0]].add(col)

        def scan_stack(t: str):
            node = Scan(
                t,
                self.locations.shard_of(t),
                [f"{t}.{c}" for c in self.schemas[t].column_names],
                [ty for _, ty in self.schemas[t].columns],
            )
            for pred in per_table[t]:
                node = Sigma(pred, node)
            if self.pushdown:
                keep = [c for c in node.columns if c in needed[t]]
                if keep and keep != node.columns:
                    types = [node.types[node.columns.index(c)] for c in keep]
                    node = Pi(keep, types, node)
            return node

        node = scan_stack(stmt.table)
        for jtable, lcol, rcol, jtype in joins:
            node = JoinOp(node, scan_stack(jtable), lcol, rcol, jtype)
        for pred in residual:
            node = Sigma(pred, node)

        if stmt.aggregates:
            specs = []
            cols = []
            types = []
            for spec in stmt.aggregates:
                if spec.column is None:
                    specs.append((spec.fn, None))
                    cols.append(f"{spec.fn}(*)")
                    types.append("int")
                else:
                    col, ctype = binder.resolve(spec.column)
                    specs.append((spec.fn, col))
                    cols.append(f"{spec.fn}({col})")
                    types.append(_AGG_TYPE.get(spec.fn, ctype))
            node = AggOp(specs, cols, types, node)
        elif out_cols != node.columns:
            types = [node.types[node.columns.index(c)] for c in out_cols]
            node = Pi(out_cols, types, node)

        if stmt.union is not None:
            right = self.build_select(stmt.union)
            if len(right.columns) != len(node.columns):
                raise SqlError("UNION sides have different arity")
            if right.types != node.types:
                raise SchemaError(
                    f"UNION sides have different types: {node.types} vs {right.types}"
                )
            node = UnionOp(node, right)
        return node

    def _bind_pred(self, pred, binder: _Binder):
        if isinstance(pred, sql.And):
            return BAnd(self._bind_pred(pred.left, binder), self._bind_pred(pred.right, binder))
        if isinstance(pred, sql.Or):
            return BOr(self._bind_pred(pred.left, binder), self._bind_pred(pred.right, binder))
        if isinstance(pred, sql.Not):
            return BNot(self._bind_pred(pred.inner, binder))
        if isinstance(pred, sql.Cmp):
            col, ctype = binder.resolve(pred.left)
            if isinstance(pred.right, sql.ColRef):
                ocol, otype = binder.resolve(pred.right)
                if otype != ctype:
                    raise SchemaError(f"comparison of {ctype} with {otype}")
                return BCmp(col, pred.op, other_column=ocol)
            return BCmp(col, pred.op, value=coerce_literal(pred.right, ctype))
        if isinstance(pred, sql.InSub):
            col, ctype = binder.resolve(pred.column)
            subplan = self.build_select(pred.select)
            if len(subplan.columns) != 1:
                raise SqlError("IN subquery must produce a single column")
            if subplan.types[0] != ctype:
                raise SchemaError(
                    f"IN subquery type {subplan.types[0]} does not match {col}:{ctype}"
                )
            self._sub_counter += 1
            return BIn(col, self._sub_counter, subplan)
        raise SqlError(f"unsupported predicate {pred!r}")


def _split_and(pred) -> list:
    if isinstance(pred, BAnd):
        return _split_and(pred.left) + _split_and(pred.right)
    return [pred]


def _pred_columns(pred) -> set:
    if isinstance(pred, BCmp):
        out = {pred.column}
        if pred.other_column:
            out.add(pred.other_column)
        return out
    if isinstance(pred, BIn):
        return {pred.column}
    if isinstance(pred, (BAnd, BOr)):
        return _pred_columns(pred.left) | _pred_columns(pred.right)
    if isinstance(pred, BNot):
        return _pred_columns(pred.inner)
    return set()


def _pred_tables(pred) -> set:
    return {c.split(".")[0] for c in _pred_columns(pred)}


def plan(stmt: sql.Select, schemas: dict, locations, pushdown: bool = True):
    """Plan a SELECT against the current table placement."""
    tree = _PlanBuilder(schemas, locations, pushdown).build_select(stmt)
    _assign_op_ids(tree)
    return tree


def _assign_op_ids(tree) -> None:
    counter = [0]

    def walk(node):
        for child in node.children:
            walk(child)
        if isinstance(node, (JoinOp, UnionOp)) and node.is_cross:
            node.op_id = counter[0]
            counter[0] += 1

    walk(tree)


def cross_operators(tree) -> list:
    """Cross-shard operators in execution (bottom-up, id) order."""
    out = []

    def walk(node):
        for child in node.children:
            walk(child)
        if isinstance(node, (JoinOp, UnionOp)) and node.is_cross:
            out.append(node)

    walk(tree)
    return out


def is_pure_subtree(node) -> bool:
    """True when no cross-shard operator occurs inside the subtree."""
    if isinstance(node, (JoinOp, UnionOp)) and node.is_cross:
        return False
    return all(is_pure_subtree(c) for c in node.children)


def top_cross_op(node):
    """The cross-shard operator whose output this subtree materializes, for
    sides that are not pure; None for pure intra-shard subtrees."""
    if isinstance(node, (JoinOp, UnionOp)) and node.is_cross:
        return node
    for child in node.children:
        got = top_cross_op(child)
        if got is not None:
            return got
    return None


def subqueries(tree) -> list:
    """All BIn predicates in the tree (not descending into subplans)."""
    found = []

    def walk_pred(pred):
        if isinstance(pred, BIn):
            found.append(pred)
        elif isinstance(pred, (BAnd, BOr)):
            walk_pred(pred.left)
            walk_pred(pred.right)
        elif isinstance(pred, BNot):
            walk_pred(pred.inner)

    def walk(node):
        if isinstance(node, Sigma):
            walk_pred(node.pred)
        for child in node.children:
            walk(child)

    walk(tree)
    return found
