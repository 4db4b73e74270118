"""Tokenizer and recursive-descent parser for the supported SQL subset.

Supported statements:

    SELECT cols|*|aggregates FROM t [JOIN t2 ON a.x = b.y]... [WHERE pred]
        [UNION <select>]
    INSERT INTO t VALUES (...), (...) | INSERT INTO t <select>
    DELETE FROM t [WHERE pred]
    UPDATE t SET c = lit [, ...] [WHERE pred]

Predicates combine comparisons with AND/OR/NOT and parentheses; a
comparison is column-vs-literal, column-vs-column, or column IN
(<select>).  Joins are equality joins only: anything else raises
UnsupportedFeatureError, as do GROUP BY / ORDER BY / LIMIT / outer joins.
Aggregates (MIN/SUM/COUNT/AVG) cannot mix with plain output columns.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..errors import SqlError, UnsupportedFeatureError

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+\.\d+|\d+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<symbol><>|!=|<=|>=|[(),.*=<>;-])
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "select", "from", "where", "join", "on", "and", "or", "not", "in",
    "union", "insert", "into", "values", "delete", "update", "set",
    "min", "sum", "count", "avg",
}

_UNSUPPORTED = {
    "group": "GROUP BY is not supported",
    "order": "ORDER BY is not supported",
    "limit": "LIMIT is not supported",
    "having": "HAVING is not supported",
    "left": "outer joins are not supported",
    "right": "outer joins are not supported",
    "outer": "outer joins are not supported",
    "exists": "EXISTS is not supported",
    "distinct": "DISTINCT is not supported",
    "as": "aliases are not supported",
}

_AGG_FNS = ("min", "sum", "count", "avg")


@dataclass(frozen=True)
class Token:
    kind: str  # ident | keyword | number | string | symbol | eof
    text: str
    offset: int


def _tokenize(text: str) -> list[Token]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise SqlError(f"unexpected character {text[pos]!r}", pos)
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        tok = m.group()
        if kind == "ident":
            low = tok.lower()
            if low in _UNSUPPORTED:
                raise UnsupportedFeatureError(_UNSUPPORTED[low], m.start())
            if low in _KEYWORDS:
                out.append(Token("keyword", low, m.start()))
                continue
        out.append(Token(kind, tok, m.start()))
    out.append(Token("eof", "", len(text)))
    return out


# --- AST ---

@dataclass(frozen=True)
class ColRef:
    table: str | None
    column: str
    offset: int = 0

    def __str__(self):
        return f"{self.table}.{self.column}" if self.table else self.column


@dataclass(frozen=True)
class Literal:
    kind: str  # int | decimal | string
    value: object
    offset: int = 0


@dataclass(frozen=True)
class Cmp:
    left: ColRef
    op: str  # = <> < <= > >=
    right: object  # Literal | ColRef


@dataclass(frozen=True)
class InSub:
    column: ColRef
    select: "Select"


@dataclass(frozen=True)
class And:
    left: object
    right: object


@dataclass(frozen=True)
class Or:
    left: object
    right: object


@dataclass(frozen=True)
class Not:
    inner: object


@dataclass(frozen=True)
class AggSpec:
    fn: str  # min | sum | count | avg
    column: ColRef | None  # None only for COUNT(*)


@dataclass(frozen=True)
class JoinClause:
    table: str
    left: ColRef
    right: ColRef


@dataclass(frozen=True)
class Select:
    columns: tuple  # ColRef tuple; empty means '*' unless aggregates given
    star: bool
    aggregates: tuple  # AggSpec tuple
    table: str
    joins: tuple  # JoinClause tuple
    where: object | None
    union: "Select | None" = None


@dataclass(frozen=True)
class Insert:
    table: str
    rows: tuple | None  # tuple of Literal tuples
    select: Select | None = None


@dataclass(frozen=True)
class Delete:
    table: str
    where: object | None


@dataclass(frozen=True)
class Update:
    table: str
    assignments: tuple  # ((column, Literal), ...)
    where: object | None


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0

    def peek(self) -> Token:
        return self.toks[self.i]

    def next(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.next()
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            raise SqlError(f"expected {want}, found {t.text or 'end of input'!r}", t.offset)
        return t

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        t = self.peek()
        if t.kind == kind and (text is None or t.text == text):
            return self.next()
        return None

    # -- statements --

    def statement(self):
        t = self.peek()
        if t.kind != "keyword":
            raise SqlError(f"expected a statement keyword, found {t.text!r}", t.offset)
        if t.text == "select":
            return self.select()
        if t.text == "insert":
            return self.insert()
        if t.text == "delete":
            return self.delete()
        if t.text == "update":
            return self.update()
        raise SqlError(f"unsupported statement {t.text!r}", t.offset)

    def select(self) -> Select:
        self.expect("keyword", "select")
        star = False
        cols: list[ColRef] = []
        aggs: list[AggSpec] = []
        if self.accept("symbol", "*"):
            star = True
        else:
            while True:
                t = self.peek()
                if t.kind == "keyword" and t.text in _AGG_FNS:
                    aggs.append(self.aggregate())
                else:
                    cols.append(self.colref())
                if not self.accept("symbol", ","):
                    break
        if cols and aggs:
            raise SqlError(
                "aggregates cannot be mixed with plain columns", self.peek().offset
            )
        self.expect("keyword", "from")
        table = self.expect("ident").text
        joins = []
        while self.accept("keyword", "join"):
            jt = self.expect("ident").text
            self.expect("keyword", "on")
            left = self.colref()
            op_tok = self.next()
            if op_tok.text != "=":
                raise UnsupportedFeatureError(
                    f"only equality joins are supported, found {op_tok.text!r}",
                    op_tok.offset,
                )
            right = self.colref()
            joins.append(JoinClause(jt, left, right))
        where = None
        if self.accept("keyword", "where"):
            where = self.pred()
        union = None
        if self.accept("keyword", "union"):
            union = self.select()
        return Select(tuple(cols), star, tuple(aggs), table, tuple(joins), where, union)

    def aggregate(self) -> AggSpec:
        fn = self.next().text
        self.expect("symbol", "(")
        if self.accept("symbol", "*"):
            if fn != "count":
                raise SqlError(f"{fn.upper()}(*) is not meaningful", self.peek().offset)
            col = None
        else:
            col = self.colref()
        self.expect("symbol", ")")
        return AggSpec(fn, col)

    def insert(self) -> Insert:
        self.expect("keyword", "insert")
        self.expect("keyword", "into")
        table = self.expect("ident").text
        if self.accept("keyword", "values"):
            rows = []
            while True:
                self.expect("symbol", "(")
                row = [self.literal()]
                while self.accept("symbol", ","):
                    row.append(self.literal())
                self.expect("symbol", ")")
                rows.append(tuple(row))
                if not self.accept("symbol", ","):
                    break
            return Insert(table, tuple(rows))
        if self.peek().text == "select":
            return Insert(table, None, self.select())
        raise SqlError("expected VALUES or SELECT after INSERT INTO", self.peek().offset)

    def delete(self) -> Delete:
        self.expect("keyword", "delete")
        self.expect("keyword", "from")
        table = self.expect("ident").text
        where = self.pred() if self.accept("keyword", "where") else None
        return Delete(table, where)

    def update(self) -> Update:
        self.expect("keyword", "update")
        table = self.expect("ident").text
        self.expect("keyword", "set")
        assignments = []
        while True:
            col = self.expect("ident").text
            self.expect("symbol", "=")
            assignments.append((col, self.literal()))
            if not self.accept("symbol", ","):
                break
        where = self.pred() if self.accept("keyword", "where") else None
        return Update(table, tuple(assignments), where)

    # -- predicates --

    def pred(self):
        left = self.and_expr()
        while self.accept("keyword", "or"):
            left = Or(left, self.and_expr())
        return left

    def and_expr(self):
        left = self.not_expr()
        while self.accept("keyword", "and"):
            left = And(left, self.not_expr())
        return left

    def not_expr(self):
        if self.accept("keyword", "not"):
            return Not(self.not_expr())
        return self.primary()

    def primary(self):
        if self.accept("symbol", "("):
            inner = self.pred()
            self.expect("symbol", ")")
            return inner
        col = self.colref()
        if self.accept("keyword", "in"):
            self.expect("symbol", "(")
            sub = self.select()
            self.expect("symbol", ")")
            return InSub(col, sub)
        op_tok = self.next()
        op = {"!=": "<>"}.get(op_tok.text, op_tok.text)
        if op not in ("=", "<>", "<", "<=", ">", ">="):
            raise SqlError(f"expected a comparison operator, found {op_tok.text!r}",
                           op_tok.offset)
        right = self.colref() if self.peek().kind == "ident" else self.literal()
        return Cmp(col, op, right)

    # -- atoms --

    def colref(self) -> ColRef:
        t = self.expect("ident")
        if self.accept("symbol", "."):
            col = self.expect("ident")
            return ColRef(t.text, col.text, t.offset)
        return ColRef(None, t.text, t.offset)

    def literal(self) -> Literal:
        t = self.next()
        if t.kind == "symbol" and t.text == "-":
            inner = self.literal()
            if inner.kind == "string":
                raise SqlError("cannot negate a string literal", t.offset)
            return Literal(inner.kind, -inner.value, t.offset)
        if t.kind == "number":
            if "." in t.text:
                whole, frac = t.text.split(".", 1)
                frac = (frac + "00")[:2]
                return Literal("decimal", int(whole) * 100 + int(frac), t.offset)
            return Literal("int", int(t.text), t.offset)
        if t.kind == "string":
            return Literal("string", t.text[1:-1].replace("''", "'"), t.offset)
        raise SqlError(f"expected a literal, found {t.text or 'end of input'!r}", t.offset)


def parse(text: str):
    """Parse one statement; raises SqlError with a byte offset on failure."""
    toks = _tokenize(text)
    p = _Parser(toks)
    stmt = p.statement()
    p.accept("symbol", ";")
    tail = p.peek()
    if tail.kind != "eof":
        raise SqlError(f"unexpected trailing input {tail.text!r}", tail.offset)
    return stmt


def parse_script(text: str) -> list:
    """Parse a ';'-separated sequence of statements."""
    out = []
    for chunk in text.split(";"):
        if chunk.strip():
            out.append(parse(chunk))
    return out


def _literal_text(lit: Literal) -> str:
    if lit.kind == "int":
        return str(lit.value)
    if lit.kind == "decimal":
        sign = "-" if lit.value < 0 else ""
        mag = abs(lit.value)
        return f"{sign}{mag // 100}.{mag % 100:02d}"
    return "'" + str(lit.value).replace("'", "''") + "'"


def _pred_text(pred) -> str:
    if isinstance(pred, And):
        return f"({_pred_text(pred.left)} AND {_pred_text(pred.right)})"
    if isinstance(pred, Or):
        return f"({_pred_text(pred.left)} OR {_pred_text(pred.right)})"
    if isinstance(pred, Not):
        return f"(NOT {_pred_text(pred.inner)})"
    if isinstance(pred, Cmp):
        rhs = str(pred.right) if isinstance(pred.right, ColRef) else _literal_text(pred.right)
        return f"{pred.left} {pred.op} {rhs}"
    if isinstance(pred, InSub):
        return f"{pred.column} IN ({to_text(pred.select)})"
    raise SqlError(f"cannot render predicate {pred!r}")


def to_text(stmt) -> str:
    """Render a statement back to parseable SQL (used to embed subqueries
    into transaction payloads)."""
    if isinstance(stmt, Select):
        if stmt.star:
            items = "*"
        elif stmt.aggregates:
            items = ", ".join(
                f"{a.fn.upper()}({a.column if a.column else '*'})" for a in stmt.aggregates
            )
        else:
            items = ", ".join(str(c) for c in stmt.columns)
        text = f"SELECT {items} FROM {stmt.table}"
        for j in stmt.joins:
            text += f" JOIN {j.table} ON {j.left} = {j.right}"
        if stmt.where is not None:
            text += f" WHERE {_pred_text(stmt.where)}"
        if stmt.union is not None:
            text += f" UNION {to_text(stmt.union)}"
        return text
    if isinstance(stmt, Insert):
        if stmt.rows is not None:
            rows = ", ".join(
                "(" + ", ".join(_literal_text(v) for v in row) + ")" for row in stmt.rows
            )
            return f"INSERT INTO {stmt.table} VALUES {rows}"
        return f"INSERT INTO {stmt.table} {to_text(stmt.select)}"
    if isinstance(stmt, Delete):
        text = f"DELETE FROM {stmt.table}"
        if stmt.where is not None:
            text += f" WHERE {_pred_text(stmt.where)}"
        return text
    if isinstance(stmt, Update):
        sets = ", ".join(f"{c} = {_literal_text(v)}" for c, v in stmt.assignments)
        text = f"UPDATE {stmt.table} SET {sets}"
        if stmt.where is not None:
            text += f" WHERE {_pred_text(stmt.where)}"
        return text
    raise SqlError(f"cannot render {type(stmt).__name__}")
