"""Schemas, typed values, and the append-only row store.

Value representation is chosen for bit-exact agreement between nodes:

- int: Python int
- decimal: fixed-point scale 2, stored as an int count of hundredths
  (consensus-visible values must never touch floating point)
- string: str
- date: ISO "YYYY-MM-DD" string; lexicographic order == chronological order

Deletion marks rows invalid instead of removing them; updates are a
deletion plus an insertion.  Rows remember the heights at which they were
created/invalidated so any historical snapshot can be reproduced, which is
what freshness anchoring and migration checkpoints rebuild from.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..encoding import enc_bytes, enc_i64, enc_seq, enc_str, enc_u64, sha256
from ..errors import SchemaError

TYPES = ("int", "decimal", "string", "date")
DECIMAL_SCALE = 100  # fixed scale 2

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


@dataclass(frozen=True)
class Schema:
    name: str
    columns: tuple  # ((col_name, col_type), ...)
    primary_key: tuple = ()

    def __post_init__(self):
        names = [c for c, _ in self.columns]
        if not names:
            raise SchemaError(f"table {self.name!r} needs at least one column")
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {self.name!r}")
        for c, t in self.columns:
            if t not in TYPES:
                raise SchemaError(f"unknown column type {t!r} for {self.name}.{c}")
        for c in self.primary_key:
            if c not in names:
                raise SchemaError(f"primary key column {c!r} not in {self.name!r}")

    @property
    def column_names(self) -> list[str]:
        return [c for c, _ in self.columns]

    def column_type(self, name: str) -> str:
        for c, t in self.columns:
            if c == name:
                return t
        raise SchemaError(f"no column {name!r} in table {self.name!r}")

    def index_of(self, name: str) -> int:
        for i, (c, _) in enumerate(self.columns):
            if c == name:
                return i
        raise SchemaError(f"no column {name!r} in table {self.name!r}")

    def to_bytes(self) -> bytes:
        return (
            enc_str(self.name)
            + enc_seq(enc_str(c) + enc_str(t) for c, t in self.columns)
            + enc_seq(enc_str(c) for c in self.primary_key)
        )


def check_value(col_type: str, value) -> None:
    if col_type in ("int", "decimal"):
        if not isinstance(value, int) or isinstance(value, bool):
            raise SchemaError(f"expected int-backed {col_type}, got {value!r}")
    elif col_type == "string":
        if not isinstance(value, str):
            raise SchemaError(f"expected string, got {value!r}")
    elif col_type == "date":
        if not isinstance(value, str) or not _DATE_RE.match(value):
            raise SchemaError(f"expected ISO date string, got {value!r}")


def encode_value(col_type: str, value) -> bytes:
    if col_type in ("int", "decimal"):
        return enc_i64(value)
    return enc_str(value)


def format_value(col_type: str, value) -> str:
    """Human/CSV rendering; decimals regain their point."""
    if col_type == "decimal":
        sign = "-" if value < 0 else ""
        mag = abs(value)
        return f"{sign}{mag // DECIMAL_SCALE}.{mag % DECIMAL_SCALE:02d}"
    return str(value)


def parse_typed(col_type: str, text: str):
    """Parse a CSV/literal token into the internal representation."""
    text = text.strip()
    try:
        if col_type == "int":
            return int(text)
        if col_type == "decimal":
            if "." in text:
                whole, frac = text.split(".", 1)
                frac = (frac + "00")[:2]
                sign = -1 if whole.strip().startswith("-") else 1
                return int(whole) * DECIMAL_SCALE + sign * int(frac)
            return int(text) * DECIMAL_SCALE
    except ValueError as ex:
        raise SchemaError(f"bad {col_type} literal {text!r}") from ex
    if col_type == "date" and not _DATE_RE.match(text):
        raise SchemaError(f"bad date literal {text!r}")
    return text


@dataclass
class Row:
    values: tuple
    txid: bytes
    seq: int
    created_height: int
    invalidated_height: int | None = None

    def valid_at(self, height: int) -> bool:
        if self.created_height > height:
            return False
        return self.invalidated_height is None or self.invalidated_height > height

    def to_bytes(self, schema: Schema, height: int) -> bytes:
        """Canonical encoding of the row state as of the given height."""
        return (
            enc_seq(encode_value(t, v) for (_, t), v in zip(schema.columns, self.values))
            + enc_bytes(self.txid)
            + enc_u64(self.seq)
            + (b"\x01" if self.valid_at(height) else b"\x00")
        )


class Table:
    """Append-only store for one table on one node."""

    def __init__(self, schema: Schema):
        self.schema = schema
        self.rows: list[Row] = []

    def clone(self) -> "Table":
        out = Table(self.schema)
        out.rows = [Row(r.values, r.txid, r.seq, r.created_height, r.invalidated_height)
                    for r in self.rows]
        return out

    def insert(self, values, txid: bytes, height: int) -> Row:
        values = tuple(values)
        if len(values) != len(self.schema.columns):
            raise SchemaError(
                f"{self.schema.name}: expected {len(self.schema.columns)} values, "
                f"got {len(values)}"
            )
        for (_, t), v in zip(self.schema.columns, values):
            check_value(t, v)
        if self.schema.primary_key:
            key_idx = [self.schema.index_of(c) for c in self.schema.primary_key]
            key = tuple(values[i] for i in key_idx)
            for r in self.rows:
                if r.valid_at(height) and tuple(r.values[i] for i in key_idx) == key:
                    raise SchemaError(
                        f"{self.schema.name}: primary key violation on {key!r}"
                    )
        row = Row(values, txid, len(self.rows), height)
        self.rows.append(row)
        return row

    def invalidate(self, pos: int, height: int) -> None:
        self.rows[pos].invalidated_height = height

    def snapshot(self, height: int) -> list[tuple[int, Row]]:
        """Valid rows as of the height, with their base positions."""
        return [(i, r) for i, r in enumerate(self.rows) if r.valid_at(height)]

    def state_digest(self, height: int) -> bytes:
        """Digest of the full table state (including invalid rows) at height."""
        parts = [r.to_bytes(self.schema, height)
                 for r in self.rows if r.created_height <= height]
        return sha256(self.schema.to_bytes() + enc_seq(parts))

    def row_encodings(self, height: int) -> list[bytes]:
        return [r.to_bytes(self.schema, height)
                for r in self.rows if r.created_height <= height]

    def content_digest(self, height: int) -> bytes:
        """Like state_digest but blind to creating-txids: value content,
        order, and validity only.  Two paths that produce the same logical
        table agree on this even when transaction ids differ."""
        parts = [
            enc_seq(encode_value(t, v) for (_, t), v in zip(self.schema.columns, r.values))
            + (b"\x01" if r.valid_at(height) else b"\x00")
            for r in self.rows if r.created_height <= height
        ]
        return sha256(self.schema.to_bytes() + enc_seq(parts))


def load_csv(schema: Schema, text: str, delimiter: str | None = None) -> list[tuple]:
    """Parse CSV with a header row; '|' accepted for TPC-H-style dumps."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    if delimiter is None:
        delimiter = "|" if "|" in lines[0] else ","
    header = [h.strip() for h in lines[0].split(delimiter)]
    expect = schema.column_names
    if header != expect:
        raise SchemaError(f"CSV header {header} does not match schema {expect}")
    out = []
    for ln in lines[1:]:
        parts = [p for p in ln.split(delimiter)]
        if len(parts) == len(expect) + 1 and parts[-1] == "":
            parts = parts[:-1]  # trailing delimiter, TPC-H .tbl style
        if len(parts) != len(expect):
            raise SchemaError(f"CSV row has {len(parts)} fields, expected {len(expect)}")
        out.append(tuple(parse_typed(t, p) for (_, t), p in zip(schema.columns, parts)))
    return out
