"""Brute-force oracles used across the suite.

The SQL oracle interprets parsed statements directly with nested loops over
full cartesian products; it never touches the planner or the executor, so
agreement between the two paths is meaningful.  Set-operation oracles are
plain Python set algebra.
"""

from __future__ import annotations

from shardb.errors import SqlError
from shardb.relational import sql
from shardb.relational.algebra import coerce_literal

ZERO = {"int": 0, "decimal": 0, "string": "", "date": "0000-01-01"}


def oracle_select(stmt: sql.Select, schemas: dict, tables: dict, height: int) -> list:
    """Evaluate a SELECT by exhaustive enumeration; returns value tuples."""
    rows = _core(stmt, schemas, tables, height)
    if stmt.union is not None:
        other = oracle_select(stmt.union, schemas, tables, height)
        seen = []
        for r in rows + other:
            if r not in seen:
                seen.append(r)
        return seen
    return rows


def _core(stmt: sql.Select, schemas, tables, height) -> list:
    names = [stmt.table] + [j.table for j in stmt.joins]
    combos = [()]
    for t in names:
        snap = [r.values for _, r in tables[t].snapshot(height)]
        combos = [c + (r,) for c in combos for r in snap]

    def col_value(combo, ref: sql.ColRef):
        if ref.table is not None:
            ti = names.index(ref.table)
            return combo[ti][schemas[ref.table].index_of(ref.column)]
        hits = [t for t in names if ref.column in schemas[t].column_names]
        if len(hits) != 1:
            raise SqlError(f"oracle cannot resolve {ref.column}")
        ti = names.index(hits[0])
        return combo[ti][schemas[hits[0]].index_of(ref.column)]

    def col_type(ref: sql.ColRef):
        if ref.table is not None:
            return schemas[ref.table].column_type(ref.column)
        hits = [t for t in names if ref.column in schemas[t].column_names]
        return schemas[hits[0]].column_type(ref.column)

    def pred_holds(combo, pred):
        if isinstance(pred, sql.And):
            return pred_holds(combo, pred.left) and pred_holds(combo, pred.right)
        if isinstance(pred, sql.Or):
            return pred_holds(combo, pred.left) or pred_holds(combo, pred.right)
        if isinstance(pred, sql.Not):
            return not pred_holds(combo, pred.inner)
        if isinstance(pred, sql.Cmp):
            left = col_value(combo, pred.left)
            if isinstance(pred.right, sql.ColRef):
                right = col_value(combo, pred.right)
            else:
                right = coerce_literal(pred.right, col_type(pred.left))
            return {
                "=": left == right, "<>": left != right, "<": left < right,
                "<=": left <= right, ">": left > right, ">=": left >= right,
            }[pred.op]
        if isinstance(pred, sql.InSub):
            sub = oracle_select(pred.select, schemas, tables, height)
            return col_value(combo, pred.column) in {r[0] for r in sub}
        raise SqlError(f"oracle cannot evaluate {pred!r}")

    kept = []
    for combo in combos:
        ok = True
        for j in stmt.joins:
            if col_value(combo, j.left) != col_value(combo, j.right):
                ok = False
                break
        if ok and stmt.where is not None and not pred_holds(combo, stmt.where):
            ok = False
        if ok:
            kept.append(combo)

    if stmt.aggregates:
        out = []
        for spec in stmt.aggregates:
            if spec.fn == "count":
                out.append(len(kept))
                continue
            vals = [col_value(c, spec.column) for c in kept]
            ctype = col_type(spec.column)
            if spec.fn == "min":
                out.append(min(vals) if vals else ZERO[ctype])
            elif spec.fn == "sum":
                out.append(sum(vals))
            elif spec.fn == "avg":
                if not vals:
                    out.append(0)
                else:
                    total = sum(vals) * (100 if ctype == "int" else 1)
                    out.append(total // len(vals))
        return [tuple(out)]

    if stmt.star:
        return [tuple(v for row in combo for v in row) for combo in kept]
    out = []
    for combo in kept:
        out.append(tuple(col_value(combo, c) for c in stmt.columns))
    return out


def sorted_values(rows) -> list:
    """Common canonical order for comparing result multisets."""
    return sorted(rows, key=repr)


def oracle_intersection(sets) -> set:
    out = set(sets[0])
    for s in sets[1:]:
        out &= set(s)
    return out


def oracle_union(sets) -> set:
    out = set()
    for s in sets:
        out |= set(s)
    return out
