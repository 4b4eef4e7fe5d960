"""Tool catalog ingestion, validation, deduplication and description enrichment."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol

from ._io import DataError, is_header, iter_jsonl_lines, write_jsonl

log = logging.getLogger(__name__)

PTYPES = ("string", "integer", "number", "boolean", "enum", "array")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")


class CatalogReadError(DataError):
    """The record stream itself could not be read."""


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    ptype: str
    description: str = ""
    required: bool = True
    enum_values: tuple[Any, ...] | None = None

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "name": self.name,
            "type": self.ptype,
            "description": self.description,
            "required": self.required,
        }
        if self.enum_values is not None:
            rec["enum"] = list(self.enum_values)
        return rec


@dataclass(frozen=True)
class ReturnField:
    name: str
    ptype: str

    def to_record(self) -> dict[str, Any]:
        return {"name": self.name, "type": self.ptype}


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: tuple[ParameterSpec, ...] = ()
    returns: tuple[ReturnField, ...] | None = None

    def param(self, name: str) -> ParameterSpec | None:
        for p in self.parameters:
            if p.name == name:
                return p
        return None

    @property
    def required_names(self) -> list[str]:
        return [p.name for p in self.parameters if p.required]

    def to_record(self, source: str | None = None) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "name": self.name,
            "description": self.description,
            "parameters": [p.to_record() for p in self.parameters],
        }
        if self.returns is not None:
            rec["returns"] = [r.to_record() for r in self.returns]
        if source is not None:
            rec["source"] = source
        return rec


@dataclass(frozen=True)
class ToolCatalog:
    tools: tuple[ToolSpec, ...] = ()
    source_tags: tuple[str | None, ...] = ()

    def __post_init__(self) -> None:
        if len(self.source_tags) != len(self.tools):
            object.__setattr__(self, "source_tags", tuple(self.source_tags) + (None,) * (len(self.tools) - len(self.source_tags)))
        names = [t.name for t in self.tools]
        if len(set(names)) != len(names):
            raise ValueError("duplicate tool names in catalog")

    @property
    def size(self) -> int:
        return len(self.tools)

    def __len__(self) -> int:
        return len(self.tools)

    def __iter__(self):
        return iter(self.tools)

    def get(self, name: str) -> ToolSpec:
        for t in self.tools:
            if t.name == name:
                return t
        raise KeyError(name)

    def to_records(self) -> list[dict[str, Any]]:
        return [t.to_record(src) for t, src in zip(self.tools, self.source_tags)]


@dataclass(frozen=True)
class RejectionReport:
    index: int
    name: str | None
    reason: str
    detail: str = ""

    def to_record(self) -> dict[str, Any]:
        return {"index": self.index, "name": self.name, "reason": self.reason, "detail": self.detail}


class _Reject(Exception):
    def __init__(self, reason: str, detail: str = "") -> None:
        super().__init__(detail)
        self.reason = reason
        self.detail = detail


def _parse_parameter(raw: Any, seen: set[str]) -> ParameterSpec:
    if not isinstance(raw, dict):
        raise _Reject("invalid_field", "parameter entry is not an object")
    for key in ("name", "type"):
        if key not in raw:
            raise _Reject("missing_field", f"parameter missing {key!r}")
    name, ptype = raw["name"], raw["type"]
    if not isinstance(name, str) or not _IDENT.match(name):
        raise _Reject("invalid_field", f"bad parameter name {name!r}")
    if name in seen:
        raise _Reject("duplicate_parameter", name)
    if ptype not in PTYPES:
        raise _Reject("unknown_ptype", f"{name}: {ptype!r}")
    desc = raw.get("description", "")
    if not isinstance(desc, str):
        raise _Reject("invalid_field", f"{name}: description must be text")
    required = raw.get("required", True)
    if not isinstance(required, bool):
        raise _Reject("invalid_field", f"{name}: required must be boolean")
    enum = raw.get("enum")
    if ptype == "enum":
        if not isinstance(enum, list) or not enum:
            raise _Reject("enum_values_mismatch", f"{name}: enum parameter needs non-empty 'enum'")
        if len(set(map(json.dumps, enum))) != len(enum):
            raise _Reject("enum_values_mismatch", f"{name}: repeated enum values")
        enum_values: tuple[Any, ...] | None = tuple(enum)
    else:
        if enum:
            raise _Reject("enum_values_mismatch", f"{name}: 'enum' given for non-enum type")
        enum_values = None
    seen.add(name)
    return ParameterSpec(name, ptype, desc, required, enum_values)


def parse_tool(raw: Any) -> ToolSpec:
    """Validate one wire record; raises ``_Reject`` with a machine-readable reason."""
    if not isinstance(raw, dict):
        raise _Reject("malformed_record", "record is not a JSON object")
    for key in ("name", "description", "parameters"):
        if key not in raw:
            raise _Reject("missing_field", key)
    name, desc, params = raw["name"], raw["description"], raw["parameters"]
    if not isinstance(name, str) or not _IDENT.match(name):
        raise _Reject("invalid_field", f"bad tool name {name!r}")
    if not isinstance(desc, str):
        raise _Reject("invalid_field", "description must be text")
    if not desc.strip():
        raise _Reject("missing_field", "description is empty")
    if not isinstance(params, list):
        raise _Reject("invalid_field", "parameters must be an array")
    seen: set[str] = set()
    parameters = tuple(_parse_parameter(p, seen) for p in params)
    returns = None
    if raw.get("returns") is not None:
        if not isinstance(raw["returns"], list):
            raise _Reject("invalid_field", "returns must be an array")
        fields = []
        for r in raw["returns"]:
            if not isinstance(r, dict) or "name" not in r or "type" not in r:
                raise _Reject("invalid_field", "returns entries need name and type")
            if r["type"] not in PTYPES:
                raise _Reject("unknown_ptype", f"returns {r['name']}: {r['type']!r}")
            fields.append(ReturnField(r["name"], r["type"]))
        returns = tuple(fields)
    return ToolSpec(name, desc, parameters, returns)


def ingest_catalog(records: Iterable[Any]) -> tuple[ToolCatalog, list[RejectionReport]]:
    """Validate and deduplicate a stream of raw tool records.

    ``records`` may yield dicts or JSONL text lines. A header line written by
    this package is skipped. The first occurrence of a tool name wins; later
    ones are rejected with ``duplicate_name``.

    Raises:
        CatalogReadError: if iterating the stream itself fails.
    """
    tools: list[ToolSpec] = []
    tags: list[str | None] = []
    rejections: list[RejectionReport] = []
    names: set[str] = set()
    it = iter(records)
    index = -1
    while True:
        try:
            raw = next(it)
        except StopIteration:
            break
        except (OSError, UnicodeDecodeError, DataError) as exc:
            raise CatalogReadError(f"unreadable record stream: {exc}") from exc
        if isinstance(raw, (str, bytes)):
            try:
                raw = json.loads(raw)
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                index += 1
                rejections.append(RejectionReport(index, None, "malformed_record", str(exc)))
                continue
        if index == -1 and is_header(raw):
            continue
        index += 1
        name = raw.get("name") if isinstance(raw, dict) else None
        try:
            tool = parse_tool(raw)
        except _Reject as rej:
            rejections.append(RejectionReport(index, name if isinstance(name, str) else None, rej.reason, rej.detail))
            continue
        if tool.name in names:
            rejections.append(RejectionReport(index, tool.name, "duplicate_name", "first occurrence wins"))
            continue
        names.add(tool.name)
        tools.append(tool)
        src = raw.get("source")
        tags.append(src if isinstance(src, str) else None)
    return ToolCatalog(tuple(tools), tuple(tags)), rejections


def read_catalog(path: str | Path) -> tuple[ToolCatalog, list[RejectionReport]]:
    return ingest_catalog(iter_jsonl_lines(path))


def write_catalog(path: str | Path, catalog: ToolCatalog, header: dict[str, Any] | None = None) -> int:
    return write_jsonl(path, catalog.to_records(), header)


class DescriptionRewriter(Protocol):
    def __call__(self, description: str, tool: ToolSpec) -> str: ...


def identity_rewriter(description: str, tool: ToolSpec) -> str:
    return description


def io_spec_rewriter(description: str, tool: ToolSpec) -> str:
    """Append an explicit ``Inputs: ... Output: ...`` sentence built from the signature."""
    inputs = ", ".join(p.name for p in tool.parameters) or "none"
    outputs = ", ".join(r.name for r in tool.returns) if tool.returns else "unspecified"
    suffix = f"Inputs: {inputs}. Output: {outputs}."
    if suffix in description:
        return description
    return f"{description.rstrip()} {suffix}"


def enrich_descriptions(
    catalog: ToolCatalog,
    rewriter: Callable[[str, ToolSpec], str] = identity_rewriter,
) -> tuple[ToolCatalog, list[str]]:
    """Rewrite tool descriptions; names and parameters are never touched.

    A rewriter that raises, or returns blank/non-text output, leaves the
    original description in place and adds a warning.
    """
    out: list[ToolSpec] = []
    warnings: list[str] = []
    for tool in catalog.tools:
        try:
            text = rewriter(tool.description, tool)
        except Exception as exc:  # noqa: BLE001 - any rewriter failure is tolerated
            warnings.append(f"{tool.name}: rewriter failed: {exc}")
            out.append(tool)
            continue
        if not isinstance(text, str) or not text.strip():
            warnings.append(f"{tool.name}: rewriter returned an empty description")
            out.append(tool)
            continue
        out.append(tool if text == tool.description else replace(tool, description=text))
    for w in warnings:
        log.warning(w)
    return ToolCatalog(tuple(out), catalog.source_tags), warnings


@dataclass(frozen=True)
class CatalogStats:
    tool_count: int
    param_count_histogram: dict[int, int] = field(default_factory=dict)
    ptype_frequencies: dict[str, int] = field(default_factory=dict)

    def to_record(self) -> dict[str, Any]:
        return {
            "tool_count": self.tool_count,
            "param_count_histogram": {str(k): v for k, v in sorted(self.param_count_histogram.items())},
            "ptype_frequencies": dict(sorted(self.ptype_frequencies.items())),
        }


def catalog_stats(catalog: ToolCatalog) -> CatalogStats:
    hist = Counter(len(t.parameters) for t in catalog.tools)
    ptypes = Counter(p.ptype for t in catalog.tools for p in t.parameters)
    return CatalogStats(len(catalog.tools), dict(hist), dict(ptypes))
