"""Deterministic bottom-up plan evaluation and DML application.

Every relation row carries provenance: base-table positions (refs) and an
ordering key built from (creating txid, sequence position) pairs.  Rows are
kept canonically sorted at every node so two nodes evaluating the same plan
over the same stores produce byte-identical relations; bitmap positions in
cross-shard proofs index into exactly these materializations.

Only rows valid at the requested height participate.  Aggregates over an
empty input yield the zero of their type (this subset has no NULLs).
"""

from __future__ import annotations

from dataclasses import dataclass

from ..encoding import enc_seq, sha256
from ..errors import SchemaError, SqlError
from . import algebra, sql
from .schema import Schema, encode_value

ZERO = {"int": 0, "decimal": 0, "string": "", "date": "0000-01-01"}


@dataclass(frozen=True)
class ERow:
    values: tuple
    refs: tuple  # ((table, base_position), ...) sorted by table
    ordkey: tuple  # ((txid, seq), ...) in tree order


@dataclass
class Relation:
    columns: list
    types: list
    rows: list  # list[ERow]

    def digest(self) -> bytes:
        parts = [
            enc_seq(encode_value(t, v) for t, v in zip(self.types, r.values))
            for r in self.rows
        ]
        return sha256(enc_seq(parts))


def _row_sort_key(types):
    def key(row: ERow):
        return (row.ordkey, tuple(encode_value(t, v) for t, v in zip(types, row.values)))
    return key


def _canon(rel: Relation) -> Relation:
    rel.rows.sort(key=_row_sort_key(rel.types))
    return rel


def eval_pred(pred, colpos: dict, values: tuple, sub_values: dict) -> bool:
    if isinstance(pred, algebra.BAnd):
        return (eval_pred(pred.left, colpos, values, sub_values)
                and eval_pred(pred.right, colpos, values, sub_values))
    if isinstance(pred, algebra.BOr):
        return (eval_pred(pred.left, colpos, values, sub_values)
                or eval_pred(pred.right, colpos, values, sub_values))
    if isinstance(pred, algebra.BNot):
        return not eval_pred(pred.inner, colpos, values, sub_values)
    if isinstance(pred, algebra.BCmp):
        left = values[colpos[pred.column]]
        right = (values[colpos[pred.other_column]]
                 if pred.other_column is not None else pred.value)
        if pred.op == "=":
            return left == right
        if pred.op == "<>":
            return left != right
        if pred.op == "<":
            return left < right
        if pred.op == "<=":
            return left <= right
        if pred.op == ">":
            return left > right
        return left >= right
    if isinstance(pred, algebra.BIn):
        if pred.sub_id not in sub_values:
            raise SqlError(f"unresolved IN subquery #{pred.sub_id}")
        return values[colpos[pred.column]] in sub_values[pred.sub_id]
    raise SqlError(f"cannot evaluate predicate {pred!r}")


def execute(node, tables: dict, height: int, sub_values: dict | None = None) -> Relation:
    """Evaluate a plan over table stores as of the given height.

    sub_values maps BIn.sub_id to a pre-resolved set of values; IN
    subqueries without an entry are evaluated inline over the same stores.
    """
    if sub_values is None:
        sub_values = {}
    sub_values = dict(sub_values)
    for bin_pred in algebra.subqueries(node):
        if bin_pred.sub_id not in sub_values:
            sub_rel = execute(bin_pred.subplan, tables, height, sub_values)
            sub_values[bin_pred.sub_id] = {r.values[0] for r in sub_rel.rows}
    return _execute(node, tables, height, sub_values)


def _execute(node, tables, height, sub_values) -> Relation:
    if isinstance(node, algebra.Scan):
        table = tables[node.table]
        rows = [
            ERow(r.values, ((node.table, pos),), ((r.txid, r.seq),))
            for pos, r in table.snapshot(height)
        ]
        return _canon(Relation(list(node.columns), list(node.types), rows))

    if isinstance(node, algebra.Sigma):
        child = _execute(node.child, tables, height, sub_values)
        colpos = {c: i for i, c in enumerate(child.columns)}
        rows = [r for r in child.rows
                if eval_pred(node.pred, colpos, r.values, sub_values)]
        return Relation(child.columns, child.types, rows)

    if isinstance(node, algebra.Pi):
        child = _execute(node.child, tables, height, sub_values)
        idx = [child.columns.index(c) for c in node.columns]
        rows = [ERow(tuple(r.values[i] for i in idx), r.refs, r.ordkey)
                for r in child.rows]
        return Relation(list(node.columns), list(node.types), rows)

    if isinstance(node, algebra.JoinOp):
        left = _execute(node.left, tables, height, sub_values)
        right = _execute(node.right, tables, height, sub_values)
        li = left.columns.index(node.left_col)
        ri = right.columns.index(node.right_col)
        by_val: dict = {}
        for rr in right.rows:
            by_val.setdefault(rr.values[ri], []).append(rr)
        rows = []
        for lr in left.rows:
            for rr in by_val.get(lr.values[li], ()):
                rows.append(ERow(
                    lr.values + rr.values,
                    tuple(sorted(lr.refs + rr.refs)),
                    lr.ordkey + rr.ordkey,
                ))
        rel = Relation(left.columns + right.columns, left.types + right.types, rows)
        return _canon(rel)

    if isinstance(node, algebra.UnionOp):
        left = _execute(node.left, tables, height, sub_values)
        right = _execute(node.right, tables, height, sub_values)
        best: dict = {}
        for r in left.rows + right.rows:
            cur = best.get(r.values)
            if cur is None or (r.ordkey, r.refs) < (cur.ordkey, cur.refs):
                best[r.values] = r
        rel = Relation(list(left.columns), list(left.types), list(best.values()))
        return _canon(rel)

    if isinstance(node, algebra.AggOp):
        child = _execute(node.child, tables, height, sub_values)
        values = tuple(
            _aggregate(fn, col, child) for fn, col in node.specs
        )
        return Relation(list(node.columns), list(node.types),
                        [ERow(values, (), ())])

    raise SqlError(f"cannot execute node {type(node).__name__}")


def _aggregate(fn: str, col: str | None, rel: Relation):
    if fn == "count":
        return len(rel.rows)
    idx = rel.columns.index(col)
    ctype = rel.types[idx]
    vals = [r.values[idx] for r in rel.rows]
    if fn == "min":
        return min(vals) if vals else ZERO[ctype]
    if fn == "sum":
        return sum(vals) if ctype in ("int", "decimal") else _bad_agg(fn, ctype)
    if fn == "avg":
        if ctype not in ("int", "decimal"):
            _bad_agg(fn, ctype)
        if not vals:
            return 0
        total = sum(vals)
        if ctype == "int":
            total *= 100  # promote to decimal scale
        return total // len(vals)
    raise SqlError(f"unknown aggregate {fn!r}")


def _bad_agg(fn, ctype):
    raise SchemaError(f"{fn.upper()} needs a numeric column, got {ctype}")


def apply_dml(stmt, schemas: dict, tables: dict, locations, height: int, txid: bytes,
              sub_values: dict | None = None, pushdown: bool = True) -> dict:
    """Apply one INSERT/DELETE/UPDATE to the local stores.

    Returns {"inserted": [(table, pos)], "invalidated": [(table, pos)]}.
    Nested selects are planned against the same stores; pre-resolved
    subquery values (the authenticated cross-shard case) go in sub_values.
    """
    delta = {"inserted": [], "invalidated": []}
    if isinstance(stmt, sql.Insert):
        table = tables[stmt.table]
        if stmt.rows is not None:
            for row in stmt.rows:
                if len(row) != len(table.schema.columns):
                    raise SchemaError(
                        f"INSERT arity {len(row)} != {len(table.schema.columns)}"
                    )
            value_rows = [
                tuple(algebra.coerce_literal(lit, t)
                      for lit, (_, t) in zip(row, table.schema.columns))
                for row in stmt.rows
            ]
        else:
            subplan = algebra.plan(stmt.select, schemas, locations, pushdown)
            if subplan.types != [t for _, t in table.schema.columns]:
                raise SchemaError("INSERT SELECT column types do not match target")
            rel = execute(subplan, tables, height, sub_values)
            value_rows = [r.values for r in rel.rows]
        for values in value_rows:
            row = table.insert(values, txid, height)
            delta["inserted"].append((stmt.table, row.seq))
        return delta

    if isinstance(stmt, (sql.Delete, sql.Update)):
        table = tables[stmt.table]
        matches = _matching_positions(stmt, schemas, tables, locations, height,
                                      sub_values, pushdown)
        if isinstance(stmt, sql.Delete):
            for pos in matches:
                table.invalidate(pos, height)
                delta["invalidated"].append((stmt.table, pos))
            return delta
        assign = {}
        for col, lit in stmt.assignments:
            ctype = table.schema.column_type(col)
            assign[table.schema.index_of(col)] = algebra.coerce_literal(lit, ctype)
        old_values = [table.rows[pos].values for pos in matches]
        for pos in matches:
            table.invalidate(pos, height)
            delta["invalidated"].append((stmt.table, pos))
        for values in old_values:
            new_values = tuple(assign.get(i, v) for i, v in enumerate(values))
            row = table.insert(new_values, txid, height)
            delta["inserted"].append((stmt.table, row.seq))
        return delta

    raise SqlError(f"not a DML statement: {type(stmt).__name__}")


def _matching_positions(stmt, schemas, tables, locations, height,
                        sub_values, pushdown) -> list[int]:
    table = tables[stmt.table]
    if stmt.where is None:
        return [pos for pos, _ in table.snapshot(height)]
    binder = algebra._Binder(schemas, [stmt.table])
    builder = algebra._PlanBuilder(schemas, locations, pushdown)
    pred = builder._bind_pred(stmt.where, binder)
    resolved = dict(sub_values or {})
    for bin_pred in _pred_subqueries(pred):
        if bin_pred.sub_id not in resolved:
            rel = execute(bin_pred.subplan, tables, height, resolved)
            resolved[bin_pred.sub_id] = {r.values[0] for r in rel.rows}
    colpos = {f"{stmt.table}.{c}": i for i, c in enumerate(table.schema.column_names)}
    return [pos for pos, row in table.snapshot(height)
            if eval_pred(pred, colpos, row.values, resolved)]


def _pred_subqueries(pred) -> list:
    if isinstance(pred, algebra.BIn):
        return [pred]
    if isinstance(pred, (algebra.BAnd, algebra.BOr)):
        return _pred_subqueries(pred.left) + _pred_subqueries(pred.right)
    if isinstance(pred, algebra.BNot):
        return _pred_subqueries(pred.inner)
    return []
