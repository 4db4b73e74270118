"""Relational data model, SQL subset, planner and executor."""

from .schema import Row, Schema, Table, load_csv  # noqa: F401
from .sql import parse  # noqa: F401
from .algebra import plan  # noqa: F401
from .executor import apply_dml, execute  # noqa: F401
