"""Synthetic dataset and workload generation.

Every table has the same five-column schema (id pk, k, num, val, tag) so
query templates shaped after the four anchor TPC-H queries can target any
table: point/range selects, range + aggregate, disjunctive predicates +
aggregate, join + nested-min subquery, and a multi-table join chain.

Skew settings: "uniform" picks tables uniformly; "low" sends two-thirds of
accesses to the hottest third of the tables; "high" sends 40% of traffic
through the low-skew pattern and the rest to four datasets initially on
the first shard.
"""

from __future__ import annotations

import random

from ..relational.schema import Schema

TABLE_SCHEMA_COLUMNS = (
    ("id", "int"), ("k", "int"), ("num", "int"),
    ("val", "decimal"), ("tag", "string"),
)
TAGS = ("red", "green", "blue", "gold")


def table_name(i: int) -> str:
    return f"t{i:02d}"


def make_schemas(n_tables: int) -> dict:
    return {table_name(i): Schema(table_name(i), TABLE_SCHEMA_COLUMNS, ("id",))
            for i in range(n_tables)}


def make_placement(n_tables: int, shards: int) -> dict:
    return {table_name(i): i % shards for i in range(n_tables)}


def make_rows(spec, rng: random.Random) -> dict:
    rows = {}
    for i in range(spec.tables):
        name = table_name(i)
        rows[name] = [
            (rid,
             rng.randint(0, max(1, spec.rows_per_table // 2)),
             rng.randint(0, 4),
             rng.randint(-10_000, 10_000),
             rng.choice(TAGS))
            for rid in range(spec.rows_per_table)
        ]
    return rows


class WorkloadGen:
    """Deterministic operation stream; one instance per simulation."""

    def __init__(self, spec, shards: int, rng: random.Random):
        self.spec = spec
        self.shards = shards
        self.rng = rng
        self.names = [table_name(i) for i in range(spec.tables)]
        self.next_id = spec.rows_per_table
        hot = max(1, spec.tables // 3)
        self.hot_set = self.names[:hot]
        self.cold_set = self.names[hot:] or self.names
        self.first_shard_set = [t for t in self.names[: 4 * shards]
                                if self.names.index(t) % shards == 0][:4] or self.names[:1]
        self.emitted_queries = 0
        self.emitted_cross = 0

    def pick_table(self) -> str:
        skew, rng = self.spec.skew, self.rng
        if skew == "uniform":
            return rng.choice(self.names)
        if skew == "low":
            if rng.random() < 2 / 3:
                return rng.choice(self.hot_set)
            return rng.choice(self.cold_set)
        if rng.random() < 0.4:
            if rng.random() < 2 / 3:
                return rng.choice(self.hot_set)
            return rng.choice(self.cold_set)
        return rng.choice(self.first_shard_set)

    def _partner_tables(self, base: str, count: int, placement: dict,
                        cross: bool) -> list | None:
        """Join partners for `base`: all same-shard for intra, spanning at
        least two shards for cross."""
        base_shard = placement[base]
        if cross:
            pool = [t for t in self.names if placement[t] != base_shard and t != base]
        else:
            pool = [t for t in self.names if placement[t] == base_shard and t != base]
        if len(pool) < count:
            return None
        return self.rng.sample(pool, count)

    def next_data_statement(self) -> str:
        rng = self.rng
        table = self.pick_table()
        roll = rng.random()
        if roll < 0.70:
            self.next_id += 1
            return (f"INSERT INTO {table} VALUES ({self.next_id}, "
                    f"{rng.randint(0, 50)}, {rng.randint(0, 4)}, "
                    f"{rng.randint(-10000, 10000)}, '{rng.choice(TAGS)}')")
        if roll < 0.85:
            return (f"UPDATE {table} SET num = {rng.randint(0, 4)} "
                    f"WHERE id = {rng.randint(0, self.next_id)}")
        return f"DELETE FROM {table} WHERE id = {rng.randint(0, self.next_id)}"

    def next_query(self, placement: dict) -> tuple[str, bool]:
        """Returns (sql, wants_cross)."""
        rng = self.rng
        shapes = sorted(self.spec.query_mix.items())
        roll = rng.random()
        acc = 0.0
        shape = shapes[-1][0]
        for name, frac in shapes:
            acc += frac
            if roll < acc:
                shape = name
                break
        cross = rng.random() < self.spec.cross_shard_ratio
        base = self.pick_table()
        sql = self._shape_sql(shape, base, placement, cross)
        if sql is None:  # not enough partner tables; degrade to a select
            sql = self._shape_sql("select", base, placement, False)
            cross = False
        self.emitted_queries += 1
        if cross:
            self.emitted_cross += 1
        return sql, cross

    def _shape_sql(self, shape: str, base: str, placement: dict,
                   cross: bool) -> str | None:
        rng = self.rng
        k = rng.randint(0, max(1, self.spec.rows_per_table // 2))
        if shape == "select":
            if cross:
                partners = self._partner_tables(base, 1, placement, True)
                if partners is None:
                    return None
                other = partners[0]
                return (f"SELECT {base}.id, {other}.id FROM {base} "
                        f"JOIN {other} ON {base}.k = {other}.k "
                        f"WHERE {base}.num = {rng.randint(0, 4)}")
            return f"SELECT id, k FROM {base} WHERE k <= {k}"
        if shape == "q6":
            return (f"SELECT SUM(val), COUNT(*) FROM {base} "
                    f"WHERE k >= {k // 2} AND k <= {k} AND num <= 3")
        if shape == "q19":
            return (f"SELECT SUM(val) FROM {base} WHERE "
                    f"(num = 1 AND k <= {k}) OR (num = 2 AND k >= {k // 2}) "
                    f"OR (tag = '{rng.choice(TAGS)}' AND NOT (num = 0))")
        if shape == "q2":
            partners = self._partner_tables(base, 1, placement, cross)
            if partners is None:
                return None
            other = partners[0]
            sub_pool = [t for t in self.names if t not in (base, other)] or [base]
            sub = rng.choice(sub_pool)
            return (f"SELECT {base}.id FROM {base} "
                    f"JOIN {other} ON {base}.k = {other}.k "
                    f"WHERE {base}.num IN (SELECT MIN(num) FROM {sub})")
        if shape == "q5":
            width = min(5, len(self.names) - 1, max(2, self.shards - 1))
            partners = self._partner_tables(base, width, placement, cross)
            if partners is None:
                return None
            joins = " ".join(f"JOIN {p} ON {base}.k = {p}.k" for p in partners)
            return (f"SELECT SUM({base}.val) FROM {base} {joins} "
                    f"WHERE {base}.num <= 3")
        return None
