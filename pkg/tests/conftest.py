import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from shardb.relational.schema import Schema, Table


@pytest.fixture
def rng():
    return random.Random(20240817)


def make_table(name: str, columns, rows, pkey=(), height: int = 0) -> Table:
    table = Table(Schema(name, tuple(columns), tuple(pkey)))
    for i, values in enumerate(rows):
        table.insert(values, b"genesis", height)
    return table


def random_tables(rng, n_tables=2, max_rows=30, prefix="t"):
    """Small random tables sharing a joinable 'k' column domain."""
    schemas = {}
    tables = {}
    for i in range(n_tables):
        name = f"{prefix}{i}"
        schema = Schema(name, (
            ("id", "int"), ("k", "int"), ("num", "int"),
            ("val", "decimal"), ("tag", "string"),
        ), ("id",))
        table = Table(schema)
        for row_id in range(rng.randint(0, max_rows)):
            table.insert((
                row_id,
                rng.randint(0, 12),
                rng.randint(0, 4),
                rng.randint(-500, 500),
                rng.choice(["a", "b", "c", "d"]),
            ), b"genesis", 0)
        schemas[name] = schema
        tables[name] = table
    return schemas, tables
