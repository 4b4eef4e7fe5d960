"""JSON / JSONL helpers shared by every artifact writer and reader.

Artifact files carry a provenance header: JSONL files start with a single
``{"header": {...}}`` line, JSON documents carry a top-level ``header`` key.
Readers skip the header transparently.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Iterator

from . import __version__

HEADER_KEY = "header"


class DataError(Exception):
    """Input data could not be read or is structurally unusable."""


def canonical_json(obj: Any) -> str:
    """Compact, key-sorted JSON; floats use Python's shortest round-trip repr."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(config: Any) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()[:16]


def make_header(config: Any = None, seed: int | None = None) -> dict[str, Any]:
    return {
        "tool": "toolenv",
        "version": __version__,
        "config_hash": config_hash(config if config is not None else {}),
        "seed": seed,
    }


def is_header(record: Any) -> bool:
    return isinstance(record, dict) and set(record) == {HEADER_KEY}


def write_jsonl(
    path: str | Path,
    records: Iterable[dict[str, Any]],
    header: dict[str, Any] | None = None,
) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        if header is not None:
            fh.write(canonical_json({HEADER_KEY: header}) + "\n")
        for rec in records:
            fh.write(canonical_json(rec) + "\n")
            n += 1
    return n


def iter_jsonl_lines(path: str | Path) -> Iterator[str]:
    """Yield raw non-empty lines; raise DataError if the file is unreadable."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing input file: {path}")
    try:
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.strip():
                    yield line
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"unreadable input {path}: {exc}") from exc


def read_jsonl(path: str | Path) -> tuple[dict[str, Any] | None, list[dict[str, Any]]]:
    """Return ``(header, records)``; malformed lines are a DataError here."""
    header = None
    out = []
    for i, line in enumerate(iter_jsonl_lines(path)):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{i + 1}: invalid JSON: {exc}") from exc
        if i == 0 and is_header(rec):
            header = rec[HEADER_KEY]
            continue
        out.append(rec)
    return header, out


def write_json(path: str | Path, doc: dict[str, Any], header: dict[str, Any] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if header is not None:
        doc = {HEADER_KEY: header, **doc}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def read_json(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing input file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable input {path}: {exc}") from exc
    if isinstance(doc, dict):
        doc.pop(HEADER_KEY, None)
    return doc
