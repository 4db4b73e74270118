import pytest

from shardb.errors import SchemaError, SqlError, UnknownTableError, UnsupportedFeatureError
from shardb.merkle import TableLocationTree
from shardb.relational import algebra, executor, sql
from shardb.relational.schema import Schema, Table, load_csv, parse_typed

from conftest import make_table, random_tables
from oracle import oracle_select, sorted_values


def locations_for(tables, shard_map=None):
    return TableLocationTree(shard_map or {t: 0 for t in tables})


# --- parser ---

def test_parse_simple_select():
    stmt = sql.parse("SELECT a FROM t WHERE b = 1")
    assert isinstance(stmt, sql.Select)
    assert stmt.columns[0].column == "a"
    assert stmt.table == "t"
    assert isinstance(stmt.where, sql.Cmp)
    assert stmt.where.op == "=" and stmt.where.right.value == 1


def test_parse_join_shape():
    stmt = sql.parse(
        "SELECT * FROM t1 JOIN t2 ON t1.oid = t2.oid WHERE t1.num = 1 AND t2.num = 1"
    )
    assert stmt.star and len(stmt.joins) == 1
    assert stmt.joins[0].table == "t2"
    assert isinstance(stmt.where, sql.And)


def test_parse_non_equijoin_rejected():
    with pytest.raises(UnsupportedFeatureError):
        sql.parse("SELECT * FROM t1 JOIN t2 ON t1.a > t2.a")


def test_parse_errors_carry_offsets():
    with pytest.raises(SqlError) as err:
        sql.parse("SELECT a FROM t WHERE b = ")
    assert err.value.offset is not None
    with pytest.raises(UnsupportedFeatureError):
        sql.parse("SELECT a FROM t ORDER BY a")
    with pytest.raises(SqlError):
        sql.parse("SELECT a, MIN(b) FROM t")


def test_parse_dml_and_union():
    ins = sql.parse("INSERT INTO t VALUES (1, 2.50, 'x''y'), (2, 3, 'z')")
    assert len(ins.rows) == 2
    assert ins.rows[0][1].kind == "decimal" and ins.rows[0][1].value == 250
    assert ins.rows[0][2].value == "x'y"
    upd = sql.parse("UPDATE t SET a = 5 WHERE b <> 2")
    assert upd.assignments[0][0] == "a"
    dele = sql.parse("DELETE FROM t1 WHERE oid IN (SELECT oid FROM t2 WHERE num = 1)")
    assert isinstance(dele.where, sql.InSub)
    uni = sql.parse("SELECT a FROM t UNION SELECT a FROM u")
    assert uni.union is not None and uni.union.table == "u"


def test_parse_script_splits_statements():
    stmts = sql.parse_script("DELETE FROM a; DELETE FROM b;")
    assert [s.table for s in stmts] == ["a", "b"]


# --- schema / table store ---

def test_parse_typed_and_csv():
    assert parse_typed("decimal", "-1.5") == -150
    assert parse_typed("decimal", "3") == 300
    assert parse_typed("int", "42") == 42
    schema = Schema("t", (("a", "int"), ("b", "decimal"), ("c", "string")))
    rows = load_csv(schema, "a|b|c\n1|2.50|x|\n2|3|y|\n")
    assert rows == [(1, 250, "x"), (2, 300, "y")]
    with pytest.raises(SchemaError):
        load_csv(schema, "a|wrong|c\n1|2|x\n")


def test_primary_key_and_validity():
    t = make_table("t", [("id", "int"), ("v", "int")], [(1, 10), (2, 20)], pkey=["id"])
    with pytest.raises(SchemaError):
        t.insert((1, 99), b"tx", 1)
    t.invalidate(0, 1)
    t.insert((1, 99), b"tx", 1)  # pk free again once old row is invalid
    assert [r.values for _, r in t.snapshot(1)] == [(2, 20), (1, 99)]
    assert [r.values for _, r in t.snapshot(0)] == [(1, 10), (2, 20)]
    assert t.state_digest(0) != t.state_digest(1)


# --- planner ---

def test_plan_pushdown_under_cross_join():
    schemas = {
        "t1": Schema("t1", (("oid", "int"), ("num", "int"))),
        "t2": Schema("t2", (("oid", "int"), ("num", "int"))),
    }
    locs = TableLocationTree({"t1": 0, "t2": 1})
    stmt = sql.parse(
        "SELECT * FROM t1 JOIN t2 ON t1.oid = t2.oid WHERE t1.num = 1 AND t2.num = 1"
    )
    tree = algebra.plan(stmt, schemas, locs)
    assert isinstance(tree, algebra.JoinOp) and tree.is_cross
    assert tree.shards == {0, 1}
    # selections pushed below the join
    assert isinstance(tree.left, (algebra.Sigma, algebra.Pi))
    ops = algebra.cross_operators(tree)
    assert len(ops) == 1 and ops[0].op_id == 0

    both_local = TableLocationTree({"t1": 0, "t2": 0})
    tree2 = algebra.plan(stmt, schemas, both_local)
    assert algebra.cross_operators(tree2) == []


def test_plan_six_table_chain_has_five_cross_ops():
    schemas = {}
    placement = {}
    for i in range(6):
        schemas[f"t{i}"] = Schema(f"t{i}", (("k", "int"), (f"c{i}", "int")))
        placement[f"t{i}"] = i
    text = "SELECT * FROM t0 " + " ".join(
        f"JOIN t{i} ON t0.k = t{i}.k" for i in range(1, 6)
    )
    tree = algebra.plan(sql.parse(text), schemas, TableLocationTree(placement))
    ops = algebra.cross_operators(tree)
    assert len(ops) == 5
    assert [op.op_id for op in ops] == [0, 1, 2, 3, 4]


def test_plan_unknown_table():
    with pytest.raises(UnknownTableError):
        algebra.plan(sql.parse("SELECT a FROM nope"),
                     {}, TableLocationTree({}))


# --- executor vs oracle ---

def exec_values(tree, tables, height=0):
    rel = executor.execute(tree, tables, height)
    return [r.values for r in rel.rows]


def test_sigma_on_empty_table():
    schemas, tables = {}, {}
    schemas["t0"] = Schema("t0", (("a", "int"),))
    tables["t0"] = Table(schemas["t0"])
    tree = algebra.plan(sql.parse("SELECT a FROM t0 WHERE a = 1"),
                        schemas, locations_for(schemas))
    assert exec_values(tree, tables) == []


def test_join_bitmap_example_shape():
    # two 3-row tables; join selects rows 1,3 of t1 and row 1 of t2
    t1 = make_table("t1", [("oid", "int"), ("num", "int")],
                    [(5, 1), (7, 1), (5, 1)])
    t2 = make_table("t2", [("oid", "int"), ("num", "int")],
                    [(5, 1), (9, 1), (10, 1)])
    schemas = {"t1": t1.schema, "t2": t2.schema}
    tables = {"t1": t1, "t2": t2}
    stmt = sql.parse("SELECT * FROM t1 JOIN t2 ON t1.oid = t2.oid "
                     "WHERE t1.num = 1 AND t2.num = 1")
    tree = algebra.plan(stmt, schemas, TableLocationTree({"t1": 0, "t2": 1}))
    got = exec_values(tree, tables)
    assert sorted_values(got) == sorted_values([(5, 1, 5, 1), (5, 1, 5, 1)])


def test_deleted_rows_never_appear(rng):
    schemas, tables = random_tables(rng, 1, max_rows=40)
    t = tables["t0"]
    for pos in range(0, len(t.rows), 3):
        t.invalidate(pos, 1)
    tree = algebra.plan(sql.parse("SELECT id FROM t0"), schemas, locations_for(schemas))
    rel = executor.execute(tree, tables, 1)
    dead = {t.rows[pos].values[0] for pos in range(0, len(t.rows), 3)}
    assert all(r.values[0] not in dead for r in rel.rows)


QUERIES = [
    "SELECT * FROM t0",
    "SELECT id, k FROM t0 WHERE num = 1 OR num = 2",
    "SELECT id FROM t0 WHERE NOT (num = 1) AND k < 6",
    "SELECT t0.id, t1.id FROM t0 JOIN t1 ON t0.k = t1.k",
    "SELECT * FROM t0 JOIN t1 ON t0.k = t1.k WHERE t0.num = 1 AND t1.num <> 2",
    "SELECT t0.id FROM t0 JOIN t1 ON t0.k = t1.k WHERE t1.tag = 'a'",
    "SELECT MIN(val), SUM(val), COUNT(*), AVG(num) FROM t0 WHERE k >= 3",
    "SELECT k FROM t0 WHERE num = 1 UNION SELECT k FROM t1 WHERE num = 2",
    "SELECT id FROM t0 WHERE k IN (SELECT k FROM t1 WHERE num = 1)",
    "SELECT id FROM t0 WHERE val >= 0.50 AND val <= 400",
]


@pytest.mark.parametrize("query", QUERIES)
def test_executor_matches_oracle_fixed_queries(query, rng):
    schemas, tables = random_tables(rng, 2, max_rows=25)
    stmt = sql.parse(query)
    tree = algebra.plan(stmt, schemas, locations_for(schemas))
    got = sorted_values(exec_values(tree, tables))
    want = sorted_values(oracle_select(stmt, schemas, tables, 0))
    assert got == want


def test_pushdown_transparency(rng):
    schemas, tables = random_tables(rng, 2, max_rows=25)
    locs = TableLocationTree({"t0": 0, "t1": 1})
    for query in QUERIES:
        stmt = sql.parse(query)
        with_pd = sorted_values(exec_values(algebra.plan(stmt, schemas, locs, True), tables))
        without = sorted_values(exec_values(algebra.plan(stmt, schemas, locs, False), tables))
        assert with_pd == without, query


def test_oracle_equivalence_randomized(rng):
    """Randomized (schema, data, query) instances against the nested-loop oracle."""
    ops = ["=", "<>", "<", "<=", ">", ">="]
    for trial in range(120):
        schemas, tables = random_tables(rng, 2, max_rows=20)
        col = rng.choice(["id", "k", "num"])
        q = rng.random()
        if q < 0.4:
            text = f"SELECT * FROM t0 WHERE {col} {rng.choice(ops)} {rng.randint(0, 10)}"
        elif q < 0.7:
            text = ("SELECT t0.id, t1.id FROM t0 JOIN t1 ON t0.k = t1.k "
                    f"WHERE t0.{col} {rng.choice(ops)} {rng.randint(0, 10)}")
        elif q < 0.85:
            text = f"SELECT k FROM t0 WHERE num = {rng.randint(0, 4)} UNION SELECT k FROM t1"
        else:
            text = (f"SELECT MIN({col}), SUM(num), COUNT(*) FROM t0 "
                    f"WHERE k <= {rng.randint(0, 12)}")
        stmt = sql.parse(text)
        tree = algebra.plan(stmt, schemas, locations_for(schemas),
                            pushdown=bool(trial % 2))
        got = sorted_values(exec_values(tree, tables))
        want = sorted_values(oracle_select(stmt, schemas, tables, 0))
        assert got == want, text


# --- DML ---

def test_insert_then_delete_keeps_invalid_row():
    schemas = {"t": Schema("t", (("id", "int"), ("v", "int")), ("id",))}
    tables = {"t": Table(schemas["t"])}
    locs = locations_for(schemas)
    executor.apply_dml(sql.parse("INSERT INTO t VALUES (1, 10)"),
                       schemas, tables, locs, 1, b"tx1")
    executor.apply_dml(sql.parse("DELETE FROM t WHERE id = 1"),
                       schemas, tables, locs, 2, b"tx2")
    assert len(tables["t"].rows) == 1
    assert not tables["t"].rows[0].valid_at(2)
    assert tables["t"].rows[0].values == (1, 10)


def test_update_is_delete_plus_insert():
    schemas = {"t": Schema("t", (("id", "int"), ("v", "int")), ("id",))}
    tables = {"t": Table(schemas["t"])}
    locs = locations_for(schemas)
    executor.apply_dml(sql.parse("INSERT INTO t VALUES (1, 10), (2, 20)"),
                       schemas, tables, locs, 1, b"tx1")
    delta = executor.apply_dml(sql.parse("UPDATE t SET v = 99 WHERE id = 2"),
                               schemas, tables, locs, 2, b"tx2")
    assert len(delta["invalidated"]) == 1 and len(delta["inserted"]) == 1
    live = [r.values for _, r in tables["t"].snapshot(2)]
    assert sorted(live) == [(1, 10), (2, 99)]


def test_insert_nested_select_matches_oracle(rng):
    schemas, tables = random_tables(rng, 2, max_rows=15)
    target = Schema("dst", (("id", "int"), ("k", "int"), ("num", "int"),
                            ("val", "decimal"), ("tag", "string")))
    schemas["dst"] = target
    tables["dst"] = Table(target)
    locs = locations_for(schemas)
    stmt = sql.parse("INSERT INTO dst SELECT * FROM t0 WHERE num = 1")
    executor.apply_dml(stmt, schemas, tables, locs, 1, b"tx")
    want = sorted_values(oracle_select(sql.parse("SELECT * FROM t0 WHERE num = 1"),
                                       schemas, tables, 0))
    got = sorted_values([r.values for _, r in tables["dst"].snapshot(1)])
    assert got == want
