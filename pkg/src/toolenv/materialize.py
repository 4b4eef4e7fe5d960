"""Derive per-domain database schemas and declarative read/write tool implementations."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .catalog import ParameterSpec, ToolCatalog, ToolSpec, parse_tool
from .community import DomainPartition
from .graph import ToolGraph, heuristic_judge, refine_edges

log = logging.getLogger(__name__)

READ_VERBS = frozenset({"get", "list", "search", "find", "check", "view", "fetch", "lookup", "query", "retrieve", "show"})
WRITE_VERBS = frozenset(
    {"create", "add", "update", "set", "delete", "cancel", "book", "modify", "transfer", "send",
     "remove", "register", "reserve", "assign", "submit", "change", "edit", "renew", "close", "pay"}
)
INSERT_VERBS = frozenset({"create", "add", "register", "submit"})
DELETE_VERBS = frozenset({"delete", "cancel"})
DEFAULT_ID_SUFFIXES = ("_id",)
MISC_TABLE = "misc"

READ_ERRORS = ("unknown_tool", "unknown_argument", "missing_required_argument", "type_mismatch")


class ImpossibleBinding(ValueError):
    """No parameter of the tool maps onto any table of the schema."""

    code = "impossible_binding"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    ctype: str
    enum_values: tuple[Any, ...] | None = None

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"name": self.name, "ctype": self.ctype}
        if self.enum_values is not None:
            rec["enum_values"] = list(self.enum_values)
        return rec

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "ColumnSpec":
        ev = rec.get("enum_values")
        return cls(rec["name"], rec["ctype"], tuple(ev) if ev is not None else None)


@dataclass(frozen=True)
class TableSpec:
    name: str
    primary_key: str
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self) -> None:
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate column in table {self.name}")
        pk = self.column(self.primary_key)
        if pk is None or pk.ctype not in ("string", "integer"):
            raise ValueError(f"table {self.name}: primary key must be a string or integer column")

    def column(self, name: str) -> ColumnSpec | None:
        for c in self.columns:
            if c.name == name:
                return c
        return None

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def to_record(self) -> dict[str, Any]:
        return {"name": self.name, "primary_key": self.primary_key, "columns": [c.to_record() for c in self.columns]}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "TableSpec":
        return cls(rec["name"], rec["primary_key"], tuple(ColumnSpec.from_record(c) for c in rec["columns"]))


@dataclass(frozen=True)
class DatabaseSchema:
    domain_id: str
    tables: tuple[TableSpec, ...]

    def __post_init__(self) -> None:
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate table names")

    def table(self, name: str) -> TableSpec | None:
        for t in self.tables:
            if t.name == name:
                return t
        return None

    @property
    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]

    def to_record(self) -> dict[str, Any]:
        return {"domain_id": self.domain_id, "tables": [t.to_record() for t in self.tables]}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "DatabaseSchema":
        return cls(rec["domain_id"], tuple(TableSpec.from_record(t) for t in rec["tables"]))


@dataclass(frozen=True)
class Effect:
    kind: str  # insert | update | delete
    assignments: tuple[tuple[str, str], ...] = ()

    def to_record(self) -> dict[str, Any]:
        return {"kind": self.kind, "assignments": [list(a) for a in self.assignments]}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Effect":
        return cls(rec["kind"], tuple((p, c) for p, c in rec.get("assignments", [])))


@dataclass(frozen=True)
class ToolImpl:
    """Declarative operator over one table.

    ``selector`` binds parameters to columns by equality. Reads return the
    ``projection`` columns of matching rows; writes apply ``effect``.
    """

    tool_name: str
    op_kind: str
    target_table: str
    selector: tuple[tuple[str, str], ...] = ()
    projection: tuple[str, ...] | None = None
    effect: Effect | None = None
    error_contract: tuple[str, ...] = READ_ERRORS

    def to_record(self) -> dict[str, Any]:
        return {
            "tool_name": self.tool_name,
            "op_kind": self.op_kind,
            "target_table": self.target_table,
            "selector": [list(s) for s in self.selector],
            "projection": list(self.projection) if self.projection is not None else None,
            "effect": self.effect.to_record() if self.effect is not None else None,
            "error_contract": list(self.error_contract),
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "ToolImpl":
        return cls(
            rec["tool_name"],
            rec["op_kind"],
            rec["target_table"],
            tuple((p, c) for p, c in rec.get("selector", [])),
            tuple(rec["projection"]) if rec.get("projection") is not None else None,
            Effect.from_record(rec["effect"]) if rec.get("effect") is not None else None,
            tuple(rec.get("error_contract", READ_ERRORS)),
        )


@dataclass(frozen=True)
class DomainBundle:
    """One executable environment: tools, their dependency slice, schema and impls.

    ``undirected_slice`` keeps the similarity edges inside the domain so walks
    have something to follow when refinement found no directed dependencies.
    """

    domain_id: str
    tools: tuple[ToolSpec, ...]
    graph_slice: tuple[tuple[str, str], ...]
    schema: DatabaseSchema
    impls: tuple[ToolImpl, ...]
    undirected_slice: tuple[tuple[str, str, float], ...] = ()

    def tool(self, name: str) -> ToolSpec | None:
        for t in self.tools:
            if t.name == name:
                return t
        return None

    def impl(self, name: str) -> ToolImpl | None:
        for i in self.impls:
            if i.tool_name == name:
                return i
        return None

    @property
    def tool_names(self) -> list[str]:
        return [t.name for t in self.tools]

    def to_record(self) -> dict[str, Any]:
        return {
            "domain_id": self.domain_id,
            "tools": [t.to_record() for t in self.tools],
            "graph_slice": [list(e) for e in self.graph_slice],
            "undirected_slice": [list(e) for e in self.undirected_slice],
            "schema": self.schema.to_record(),
            "impls": [i.to_record() for i in self.impls],
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "DomainBundle":
        return cls(
            rec["domain_id"],
            tuple(parse_tool(t) for t in rec["tools"]),
            tuple((a, b) for a, b in rec.get("graph_slice", [])),
            DatabaseSchema.from_record(rec["schema"]),
            tuple(ToolImpl.from_record(i) for i in rec["impls"]),
            tuple((a, b, float(w)) for a, b, w in rec.get("undirected_slice", [])),
        )


# --- naming helpers ------------------------------------------------------------


def name_tokens(name: str) -> list[str]:
    spaced = re.sub(r"([a-z0-9])([A-Z])", r"\1_\2", name)
    return [t for t in re.split(r"[^A-Za-z0-9]+", spaced.lower()) if t]


def leading_verb(tool_name: str) -> str:
    toks = name_tokens(tool_name)
    return toks[0] if toks else ""


def singular(word: str) -> str:
    if len(word) > 4 and word.endswith("ies"):
        return word[:-3] + "y"
    if len(word) > 3 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


def object_nouns(tool_name: str) -> list[str]:
    """Tokens after the leading verb, singularised, e.g. get_user_orders -> [user, order]."""
    return [singular(t) for t in name_tokens(tool_name)[1:]]


def is_id_param(name: str, suffixes: Sequence[str] = DEFAULT_ID_SUFFIXES) -> bool:
    return name == "id" or any(name.endswith(s) and len(name) > len(s) for s in suffixes)


def id_stem(param: str, tool_name: str, suffixes: Sequence[str] = DEFAULT_ID_SUFFIXES) -> str:
    if param == "id":
        nouns = object_nouns(tool_name)
        return nouns[0] if nouns else "entity"
    for s in suffixes:
        if param.endswith(s) and len(param) > len(s):
            return param[: -len(s)]
    raise ValueError(f"{param} is not an id parameter")


def pk_column(stem: str) -> str:
    return f"{stem}_id"


# --- op classification -------------------------------------------------------


def classify_op(tool: ToolSpec, overrides: Mapping[str, str] | None = None) -> str:
    """``read`` or ``write`` from an override or the tool name's leading verb."""
    if overrides and tool.name in overrides:
        kind = overrides[tool.name]
        if kind not in ("read", "write"):
            raise ValueError(f"override for {tool.name} must be read or write, got {kind!r}")
        return kind
    verb = leading_verb(tool.name)
    if verb in READ_VERBS:
        return "read"
    if verb in WRITE_VERBS:
        return "write"
    log.warning("unknown verb %r in %s; treating as read", verb, tool.name)
    return "read"


# --- schema derivation -------------------------------------------------------


def choose_target(tool: ToolSpec, stems: Iterable[str], suffixes: Sequence[str] = DEFAULT_ID_SUFFIXES) -> str | None:
    """Entity table a tool operates on.

    The first object noun of the tool name that names a known entity wins,
    then the first id parameter. ``None`` means the tool has no entity.
    """
    known = set(stems)
    for noun in object_nouns(tool.name):
        if noun in known:
            return noun
    for p in tool.parameters:
        if is_id_param(p.name, suffixes):
            return id_stem(p.name, tool.name, suffixes)
    return None


def _column_for(param: ParameterSpec) -> ColumnSpec:
    return ColumnSpec(param.name, param.ptype, param.enum_values)


class SchemaGenerator:
    """Default heuristic: ``<stem>_id`` parameters seed entity tables.

    Each tool's other parameters become columns of the table it targets;
    tools that target no entity feed a ``misc`` table keyed by ``misc_id``.
    Column types come from the first tool (in name order) declaring them.
    """

    def __init__(self, id_suffixes: Sequence[str] = DEFAULT_ID_SUFFIXES) -> None:
        self.id_suffixes = tuple(id_suffixes)

    def __call__(self, domain_id: str, tools: Sequence[ToolSpec]) -> DatabaseSchema:
        if not tools:
            raise ValueError("derive_schema needs at least one tool")
        tools = sorted(tools, key=lambda t: t.name)
        sfx = self.id_suffixes
        stems = {id_stem(p.name, t.name, sfx) for t in tools for p in t.parameters if is_id_param(p.name, sfx)}
        columns: dict[str, dict[str, ColumnSpec]] = {s: {} for s in stems}
        pk_types: dict[str, str] = {}
        for t in tools:
            target = choose_target(t, stems, sfx)
            key = target if target is not None else MISC_TABLE
            cols = columns.setdefault(key, {})
            for p in t.parameters:
                if is_id_param(p.name, sfx) and id_stem(p.name, t.name, sfx) == target:
                    if p.ptype in ("string", "integer"):
                        pk_types.setdefault(target, p.ptype)
                    continue
                cols.setdefault(p.name, _column_for(p))
        # a table's own pk never doubles as a plain column
        tables = []
        for name in sorted(columns):
            pk = pk_column(name)
            cols = {k: v for k, v in columns[name].items() if k != pk}
            pk_spec = ColumnSpec(pk, pk_types.get(name, "string"))
            tables.append(TableSpec(name, pk, (pk_spec, *(cols[k] for k in sorted(cols)))))
        return DatabaseSchema(domain_id, tuple(tables))


def derive_schema(
    domain_tools: Sequence[ToolSpec],
    generator: Callable[[str, Sequence[ToolSpec]], DatabaseSchema] | None = None,
    domain_id: str = "domain",
) -> DatabaseSchema:
    return (generator or SchemaGenerator())(domain_id, list(domain_tools))


# --- tool materialization ----------------------------------------------------


class ImplGenerator:
    """Default heuristic binding of a tool signature onto one table."""

    def __init__(self, id_suffixes: Sequence[str] = DEFAULT_ID_SUFFIXES) -> None:
        self.id_suffixes = tuple(id_suffixes)

    def __call__(self, tool: ToolSpec, schema: DatabaseSchema, op_kind: str) -> ToolImpl:
        sfx = self.id_suffixes
        entity_tables = [t for t in schema.table_names if t != MISC_TABLE]
        target = choose_target(tool, entity_tables, sfx)
        table = schema.table(target) if target is not None else None
        if table is None:
            table = schema.table(MISC_TABLE)
        if table is None:
            raise ImpossibleBinding(f"{tool.name}: no schema table matches")
        selector: list[tuple[str, str]] = []
        rest: list[str] = []
        for p in tool.parameters:
            if is_id_param(p.name, sfx) and pk_column(id_stem(p.name, tool.name, sfx)) == table.primary_key:
                selector.append((p.name, table.primary_key))
            elif table.column(p.name) is not None and p.name != table.primary_key:
                rest.append(p.name)
            elif p.name == table.primary_key:
                selector.append((p.name, table.primary_key))
        if not selector and not rest:
            raise ImpossibleBinding(f"{tool.name}: no parameter maps onto table {table.name}")
        if op_kind == "read":
            projection = tuple(rest) if rest else tuple(table.column_names)
            return ToolImpl(tool.name, "read", table.name, tuple(selector), projection, None, READ_ERRORS)
        verb = leading_verb(tool.name)
        assignments = tuple((p, p) for p in rest)
        if verb in INSERT_VERBS:
            effect = Effect("insert", assignments)
            errors = READ_ERRORS + ("duplicate_key",)
        elif verb in DELETE_VERBS and not rest:
            effect = Effect("delete")
            errors = READ_ERRORS + ("selector_miss",)
        else:
            effect = Effect("update", assignments)
            errors = READ_ERRORS + ("selector_miss",)
        return ToolImpl(tool.name, "write", table.name, tuple(selector), None, effect, errors)


def materialize_tool(
    tool: ToolSpec,
    schema: DatabaseSchema,
    op_kind: str,
    generator: Callable[[ToolSpec, DatabaseSchema, str], ToolImpl] | None = None,
) -> ToolImpl:
    """Bind a tool onto the schema; raises ``ImpossibleBinding`` when nothing maps."""
    return (generator or ImplGenerator())(tool, schema, op_kind)


# --- validation --------------------------------------------------------------


@dataclass(frozen=True)
class BundleError:
    code: str
    detail: str = ""


def validate_bundle(bundle: DomainBundle) -> list[BundleError]:
    """Every problem found in the bundle; an empty list means valid."""
    errors: list[BundleError] = []
    tool_names = [t.name for t in bundle.tools]
    tools = set(tool_names)
    if len(tools) != len(tool_names):
        errors.append(BundleError("duplicate_tool", bundle.domain_id))
    seen: dict[str, int] = {}
    for impl in bundle.impls:
        seen[impl.tool_name] = seen.get(impl.tool_name, 0) + 1
    for name in tool_names:
        if name not in seen:
            errors.append(BundleError("missing_impl", name))
        elif seen[name] > 1:
            errors.append(BundleError("duplicate_impl", name))
    for name in seen:
        if name not in tools:
            errors.append(BundleError("unknown_tool_impl", name))
    for impl in bundle.impls:
        if impl.op_kind not in ("read", "write"):
            errors.append(BundleError("bad_op_kind", f"{impl.tool_name}: {impl.op_kind}"))
        if (impl.op_kind == "read") != (impl.effect is None):
            errors.append(BundleError("op_effect_mismatch", impl.tool_name))
        if impl.op_kind == "read" and impl.projection is None:
            errors.append(BundleError("op_effect_mismatch", f"{impl.tool_name}: read without projection"))
        if impl.effect is not None and impl.effect.kind not in ("insert", "update", "delete"):
            errors.append(BundleError("bad_effect", f"{impl.tool_name}: {impl.effect.kind}"))
        table = bundle.schema.table(impl.target_table)
        if table is None:
            errors.append(BundleError("unresolved_table", f"{impl.tool_name}: {impl.target_table}"))
            continue
        tool = bundle.tool(impl.tool_name)
        cols = [c for _, c in impl.selector] + list(impl.projection or ())
        params = [p for p, _ in impl.selector]
        if impl.effect is not None:
            cols += [c for _, c in impl.effect.assignments]
            params += [p for p, _ in impl.effect.assignments]
        for c in cols:
            if table.column(c) is None:
                errors.append(BundleError("unresolved_column", f"{impl.tool_name}: {table.name}.{c}"))
        if tool is not None:
            for p in params:
                if tool.param(p) is None:
                    errors.append(BundleError("unknown_parameter", f"{impl.tool_name}: {p}"))
    for a, b in bundle.graph_slice:
        if a not in tools or b not in tools:
            errors.append(BundleError("dangling_edge", f"{a}->{b}"))
    for a, b, _ in bundle.undirected_slice:
        if a not in tools or b not in tools:
            errors.append(BundleError("dangling_edge", f"{a}-{b}"))
    return errors


@dataclass
class BuildReport:
    bundle: DomainBundle
    dropped: list[tuple[str, str]] = field(default_factory=list)


def build_bundle(
    domain_id: str,
    tools: Sequence[ToolSpec],
    directed_edges: Iterable[tuple[str, str]] = (),
    undirected_edges: Iterable[tuple[str, str, float]] = (),
    overrides: Mapping[str, str] | None = None,
    schema_generator: Callable[[str, Sequence[ToolSpec]], DatabaseSchema] | None = None,
    impl_generator: Callable[[ToolSpec, DatabaseSchema, str], ToolImpl] | None = None,
) -> BuildReport:
    """Derive schema and impls for one domain.

    Tools that cannot be bound are dropped (reported with their reason) so
    the bundle always carries exactly one impl per tool.
    """
    schema = derive_schema(tools, schema_generator, domain_id)
    kept: list[ToolSpec] = []
    impls: list[ToolImpl] = []
    dropped: list[tuple[str, str]] = []
    for t in sorted(tools, key=lambda t: t.name):
        try:
            impl = materialize_tool(t, schema, classify_op(t, overrides), impl_generator)
        except ImpossibleBinding as exc:
            dropped.append((t.name, str(exc)))
            continue
        kept.append(t)
        impls.append(impl)
    names = {t.name for t in kept}
    gslice = tuple(sorted((a, b) for a, b in directed_edges if a in names and b in names))
    uslice = tuple(sorted((a, b, w) for a, b, w in undirected_edges if a in names and b in names))
    bundle = DomainBundle(domain_id, tuple(kept), gslice, schema, tuple(impls), uslice)
    errs = validate_bundle(bundle)
    if errs:
        raise ValueError(f"generated bundle {domain_id} is invalid: {errs}")
    for name, why in dropped:
        log.warning("dropped %s from %s: %s", name, domain_id, why)
    return BuildReport(bundle, dropped)


@dataclass
class DomainBuild:
    bundles: list[DomainBundle]
    graph: ToolGraph
    dropped: list[tuple[str, str]] = field(default_factory=list)


def build_domains(
    catalog: ToolCatalog,
    graph: ToolGraph,
    partition: DomainPartition,
    overrides: Mapping[str, str] | None = None,
    min_size: int = 1,
    judge: Callable[[ToolSpec, ToolSpec], str] = heuristic_judge,
) -> DomainBuild:
    """Refine dependencies inside each community and materialize it as a domain.

    Communities smaller than ``min_size`` are skipped. Domains are numbered
    ``domain_000``, ``domain_001``, ... in partition order, counting only the
    ones that keep at least one tool.
    """
    bundles: list[DomainBundle] = []
    dropped: list[tuple[str, str]] = []
    for community in partition.communities:
        if len(community) < min_size:
            continue
        tools = [catalog.get(n) for n in community]
        graph, _ = refine_edges(tools, graph, judge)
        members = set(community)
        directed = [e for e in graph.directed_edges if e[0] in members and e[1] in members]
        undirected = [e for e in graph.undirected_edges if e[0] in members and e[1] in members]
        report = build_bundle(f"domain_{len(bundles):03d}", tools, directed, undirected, overrides)
        dropped.extend(report.dropped)
        if report.bundle.tools:
            bundles.append(report.bundle)
    return DomainBuild(bundles, graph, dropped)
