"""Environment database state and the read/write interpreter over it.

States are treated as immutable values: ``execute`` copies only the table it
writes to and returns a new state. Rows are plain dicts that are never
mutated after construction.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from ._io import canonical_json
from .catalog import ParameterSpec, ToolSpec
from .materialize import ColumnSpec, DatabaseSchema, DomainBundle, TableSpec

DIGEST_ALGORITHM = "sha256"

WORDS = (
    "amber", "birch", "cobalt", "delta", "ember", "fjord", "garnet", "harbor", "indigo", "juniper",
    "kestrel", "lagoon", "maple", "nimbus", "onyx", "pebble", "quartz", "raven", "sierra", "tundra",
    "umber", "velvet", "willow", "xenon", "yarrow", "zephyr", "alpine", "beacon", "cedar", "dune",
    "echo", "falcon", "glacier", "heron", "island", "jasper", "kelp", "lotus", "meadow", "nova",
    "orchid", "prairie", "quill", "ridge", "saffron", "thistle", "upland", "vista", "wren", "yonder",
)

Row = Mapping[str, Any]


@dataclass(frozen=True)
class EnvironmentState:
    schema_ref: str
    tables: Mapping[str, Mapping[Any, Row]] = field(default_factory=dict)

    def rows(self, table: str) -> list[Row]:
        t = self.tables.get(table, {})
        return [t[k] for k in sorted(t, key=_pk_sort_key)]

    def to_record(self) -> dict[str, Any]:
        """Canonical JSON form: tables by name, rows as a pk-sorted list."""
        return {
            "schema_ref": self.schema_ref,
            "tables": {name: [dict(r) for r in self.rows(name)] for name in sorted(self.tables)},
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any], schema: DatabaseSchema) -> "EnvironmentState":
        tables: dict[str, dict[Any, Row]] = {}
        for tspec in schema.tables:
            rows = rec.get("tables", {}).get(tspec.name, [])
            tables[tspec.name] = {r[tspec.primary_key]: dict(r) for r in rows}
        return cls(rec.get("schema_ref", schema.domain_id), tables)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EnvironmentState):
            return NotImplemented
        return self.to_record() == other.to_record()

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)
    call_id: str | None = None

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"name": self.tool_name, "arguments": dict(self.arguments)}
        if self.call_id is not None:
            rec["id"] = self.call_id
        return rec

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "ToolCall":
        return cls(rec["name"], dict(rec.get("arguments", {})), rec.get("id"))


@dataclass(frozen=True)
class ToolResult:
    status: str
    payload: Any = None
    error_code: str | None = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_record(self) -> dict[str, Any]:
        if self.ok:
            return {"status": "ok", "payload": self.payload}
        return {"status": "error", "error_code": self.error_code, "message": self.message}

    def to_text(self) -> str:
        return canonical_json(self.to_record())


def _error(code: str, message: str) -> ToolResult:
    return ToolResult("error", None, code, message)


@dataclass(frozen=True)
class StateDigest:
    hex: str
    algorithm: str = DIGEST_ALGORITHM

    def to_record(self) -> dict[str, str]:
        return {"hex": self.hex, "algorithm": self.algorithm}

    @classmethod
    def from_record(cls, rec: Mapping[str, str]) -> "StateDigest":
        return cls(rec["hex"], rec.get("algorithm", DIGEST_ALGORITHM))


def _pk_sort_key(pk: Any) -> tuple[int, Any]:
    return (0, pk) if isinstance(pk, (int, float)) and not isinstance(pk, bool) else (1, str(pk))


# --- value typing ------------------------------------------------------------


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v: Any) -> bool:
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


def _is_scalar(v: Any) -> bool:
    return isinstance(v, (str, bool)) or _is_number(v)


def conforms(value: Any, ptype: str, enum_values: Sequence[Any] | None = None) -> bool:
    if ptype == "string":
        return isinstance(value, str)
    if ptype == "integer":
        return _is_int(value)
    if ptype == "number":
        return _is_number(value)
    if ptype == "boolean":
        return isinstance(value, bool)
    if ptype == "enum":
        return _is_scalar(value) and enum_values is not None and value in list(enum_values)
    if ptype == "array":
        return isinstance(value, list) and all(_is_scalar(x) for x in value)
    return False


def coerce(value: Any, ctype: str) -> Any:
    """Store numbers in ``number`` columns as floats so 1 and 1.0 digest alike."""
    if ctype == "number" and _is_int(value):
        return float(value)
    if ctype == "array":
        return list(value)
    return value


def default_value(col: ColumnSpec) -> Any:
    return {
        "string": "",
        "integer": 0,
        "number": 0.0,
        "boolean": False,
        "array": [],
    }.get(col.ctype, col.enum_values[0] if col.enum_values else "")


# --- state initialization ----------------------------------------------------


def random_value(col: ColumnSpec | ParameterSpec, rng: random.Random) -> Any:
    kind = col.ctype if isinstance(col, ColumnSpec) else col.ptype
    if kind == "string":
        return rng.choice(WORDS)
    if kind == "integer":
        return rng.randint(0, 1000)
    if kind == "number":
        return round(rng.uniform(0, 1000), 2)
    if kind == "boolean":
        return rng.random() < 0.5
    if kind == "enum":
        return rng.choice(list(col.enum_values or ("",)))
    if kind == "array":
        return [rng.choice(WORDS) for _ in range(rng.randint(1, 3))]
    raise ValueError(f"unknown type {kind}")


def init_state(
    schema: DatabaseSchema,
    seed: int,
    rows_per_table: tuple[int, int] = (3, 6),
) -> EnvironmentState:
    """Seeded random database contents.

    Every table receives between ``rows_per_table[0]`` and
    ``rows_per_table[1]`` rows. Columns named ``<stem>_id`` that reference
    another table draw values from that table's primary keys.
    """
    lo, hi = rows_per_table
    if not 0 <= lo <= hi:
        raise ValueError("rows_per_table must satisfy 0 <= lo <= hi")
    rng = random.Random(seed)
    pks: dict[str, list[Any]] = {}
    for t in schema.tables:
        n = rng.randint(lo, hi)
        nums = sorted(rng.sample(range(1000, 10000), n))
        pk_col = t.column(t.primary_key)
        pks[t.name] = nums if pk_col.ctype == "integer" else [f"{t.name}_{k}" for k in nums]
    by_pk_name = {t.primary_key: t.name for t in schema.tables}
    tables: dict[str, dict[Any, Row]] = {}
    for t in schema.tables:
        rows: dict[Any, Row] = {}
        for pk in pks[t.name]:
            row: dict[str, Any] = {}
            for c in t.columns:
                if c.name == t.primary_key:
                    row[c.name] = pk
                elif c.name in by_pk_name and pks[by_pk_name[c.name]] and conforms(pks[by_pk_name[c.name]][0], c.ctype):
                    row[c.name] = rng.choice(pks[by_pk_name[c.name]])
                else:
                    row[c.name] = random_value(c, rng)
            rows[pk] = row
        tables[t.name] = rows
    return EnvironmentState(schema.domain_id, tables)


def synthesize_pk(state: EnvironmentState, table: TableSpec) -> Any:
    """Next free key of the form ``<table>_<n>`` (or ``n`` for integer keys), n = 1, 2, ..."""
    existing = state.tables.get(table.name, {})
    integer = table.column(table.primary_key).ctype == "integer"
    n = 1
    while True:
        key: Any = n if integer else f"{table.name}_{n}"
        if key not in existing:
            return key
        n += 1


# --- execution ---------------------------------------------------------------


def _check_arguments(tool: ToolSpec, args: Mapping[str, Any]) -> ToolResult | None:
    if not isinstance(args, Mapping):
        return _error("type_mismatch", "arguments must be an object")
    for name in args:
        if tool.param(name) is None:
            return _error("unknown_argument", f"{tool.name} has no parameter {name!r}")
    for p in tool.parameters:
        if p.name not in args:
            if p.required:
                return _error("missing_required_argument", f"missing {p.name!r}")
            continue
        if not conforms(args[p.name], p.ptype, p.enum_values):
            return _error("type_mismatch", f"{p.name!r} expects {p.ptype}")
    return None


def _matches(row: Row, bindings: list[tuple[str, Any]]) -> bool:
    return all(row.get(col) == val for col, val in bindings)


def execute(state: EnvironmentState, bundle: DomainBundle, call: ToolCall) -> tuple[EnvironmentState, ToolResult]:
    """Apply one tool call. Errors come back as results with the state untouched."""
    tool = bundle.tool(call.tool_name)
    impl = bundle.impl(call.tool_name)
    if tool is None or impl is None:
        return state, _error("unknown_tool", f"no tool named {call.tool_name!r}")
    bad = _check_arguments(tool, call.arguments)
    if bad is not None:
        return state, bad
    table = bundle.schema.table(impl.target_table)
    args = call.arguments
    bindings = [(col, coerce(args[p], table.column(col).ctype)) for p, col in impl.selector if p in args]
    rows = state.tables.get(table.name, {})

    if impl.op_kind == "read":
        hits = [rows[k] for k in sorted(rows, key=_pk_sort_key) if _matches(rows[k], bindings)]
        proj = impl.projection or tuple(table.column_names)
        payload = [{c: r[c] for c in proj} for r in hits]
        return state, ToolResult("ok", payload)

    effect = impl.effect
    assert effect is not None
    assigned = {col: coerce(args[p], table.column(col).ctype) for p, col in effect.assignments if p in args}
    new_rows = dict(rows)
    if effect.kind == "insert":
        pk = dict(bindings).get(table.primary_key)
        if pk is None:
            pk = synthesize_pk(state, table)
        if pk in rows:
            return state, _error("duplicate_key", f"{table.name} already has {pk!r}")
        row = {c.name: default_value(c) for c in table.columns}
        row.update({col: val for col, val in bindings})
        row.update(assigned)
        row[table.primary_key] = pk
        new_rows[pk] = row
        affected = [row]
    else:
        keys = [k for k in sorted(rows, key=_pk_sort_key) if _matches(rows[k], bindings)]
        if not keys:
            return state, _error("selector_miss", f"no {table.name} row matches {dict(bindings)}")
        affected = []
        for k in keys:
            if effect.kind == "delete":
                affected.append(new_rows.pop(k))
            else:
                row = {**rows[k], **assigned}
                new_rows[k] = row
                affected.append(row)
    tables = dict(state.tables)
    tables[table.name] = new_rows
    return EnvironmentState(state.schema_ref, tables), ToolResult("ok", [dict(r) for r in affected])


def replay(state: EnvironmentState, bundle: DomainBundle, calls: Iterable[ToolCall]) -> tuple[EnvironmentState, list[ToolResult]]:
    results = []
    for call in calls:
        state, res = execute(state, bundle, call)
        results.append(res)
    return state, results


# --- digests -----------------------------------------------------------------


def _ignored(table: str, column: str, ignore: frozenset[str]) -> bool:
    return column in ignore or f"{table}.{column}" in ignore


def canonical_state(state: EnvironmentState, ignore_columns: Iterable[str] = ()) -> str:
    ignore = frozenset(ignore_columns)
    rec = state.to_record()
    if ignore:
        rec["tables"] = {
            t: [{c: v for c, v in row.items() if not _ignored(t, c, ignore)} for row in rows]
            for t, rows in rec["tables"].items()
        }
    return canonical_json(rec)


def digest(state: EnvironmentState, ignore_columns: Iterable[str] = ()) -> StateDigest:
    """SHA-256 over the canonical JSON of the state.

    ``ignore_columns`` entries are either bare column names or
    ``table.column``; matching cells are dropped before hashing.
    """
    text = canonical_state(state, ignore_columns)
    return StateDigest(hashlib.sha256(text.encode("utf-8")).hexdigest())


# --- diffs -------------------------------------------------------------------


@dataclass(frozen=True)
class StateDiff:
    added: tuple[tuple[str, Any, Row], ...] = ()
    removed: tuple[tuple[str, Any, Row], ...] = ()
    changed: tuple[tuple[str, Any, str, Any, Any], ...] = ()

    @property
    def is_empty(self) -> bool:
        return not (self.added or self.removed or self.changed)

    def to_record(self) -> dict[str, Any]:
        return {
            "added": [{"table": t, "pk": k, "row": dict(r)} for t, k, r in self.added],
            "removed": [{"table": t, "pk": k, "row": dict(r)} for t, k, r in self.removed],
            "changed": [
                {"table": t, "pk": k, "column": c, "before": b, "after": a} for t, k, c, b, a in self.changed
            ],
        }


class SchemaMismatch(ValueError):
    pass


def diff(before: EnvironmentState, after: EnvironmentState) -> StateDiff:
    """Cell-level difference; ``apply_diff(before, diff(before, after)) == after``."""
    if before.schema_ref != after.schema_ref or set(before.tables) != set(after.tables):
        raise SchemaMismatch(f"cannot diff {before.schema_ref!r} against {after.schema_ref!r}")
    added, removed, changed = [], [], []
    for t in sorted(before.tables):
        b, a = before.tables[t], after.tables[t]
        for k in sorted(set(b) | set(a), key=_pk_sort_key):
            if k not in a:
                removed.append((t, k, dict(b[k])))
            elif k not in b:
                added.append((t, k, dict(a[k])))
            elif b[k] != a[k] or json.dumps(b[k], sort_keys=True) != json.dumps(a[k], sort_keys=True):
                for c in sorted(set(b[k]) | set(a[k])):
                    bv, av = b[k].get(c), a[k].get(c)
                    if bv != av or type(bv) is not type(av):
                        changed.append((t, k, c, bv, av))
    return StateDiff(tuple(added), tuple(removed), tuple(changed))


def apply_diff(state: EnvironmentState, d: StateDiff) -> EnvironmentState:
    tables = {t: dict(rows) for t, rows in state.tables.items()}
    for t, k, _ in d.removed:
        del tables[t][k]
    for t, k, row in d.added:
        tables[t][k] = dict(row)
    for t, k, c, _, after in d.changed:
        tables[t][k] = {**tables[t][k], c: after}
    return EnvironmentState(state.schema_ref, tables)
