"""Verifiable task synthesis: directed walks, grounded arguments, golden traces, intents."""

from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

from .catalog import ParameterSpec, ToolSpec
from .materialize import ColumnSpec, DomainBundle, TableSpec, ToolImpl, name_tokens
from .runtime import (
    EnvironmentState,
    StateDigest,
    ToolCall,
    WORDS,
    conforms,
    digest,
    execute,
    init_state,
    random_value,
    replay,
    synthesize_pk,
)

log = logging.getLogger(__name__)

WALK_RETRIES = 10


@dataclass(frozen=True)
class WalkConfig:
    max_steps: int = 8
    min_steps: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.min_steps <= self.max_steps:
            raise ValueError("need 1 <= min_steps <= max_steps")

    def to_record(self) -> dict[str, int]:
        return {"max_steps": self.max_steps, "min_steps": self.min_steps, "seed": self.seed}


@dataclass(frozen=True)
class GoldenAction:
    tool_name: str
    arguments: Mapping[str, Any]
    expected_status: str = "ok"

    def to_call(self, call_id: str | None = None) -> ToolCall:
        return ToolCall(self.tool_name, dict(self.arguments), call_id)

    def to_record(self) -> dict[str, Any]:
        return {"tool_name": self.tool_name, "arguments": dict(self.arguments), "expected_status": self.expected_status}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "GoldenAction":
        return cls(rec["tool_name"], dict(rec["arguments"]), rec.get("expected_status", "ok"))


@dataclass(frozen=True)
class AgenticTask:
    task_id: str
    domain_id: str
    seed_state: EnvironmentState
    golden_actions: tuple[GoldenAction, ...]
    golden_digest: StateDigest
    intent_text: str
    all_read: bool

    def to_record(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "domain_id": self.domain_id,
            "seed_state": self.seed_state.to_record(),
            "golden_actions": [a.to_record() for a in self.golden_actions],
            "golden_digest": self.golden_digest.to_record(),
            "intent": self.intent_text,
            "all_read": self.all_read,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any], bundle: DomainBundle) -> "AgenticTask":
        return cls(
            rec["task_id"],
            rec["domain_id"],
            EnvironmentState.from_record(rec["seed_state"], bundle.schema),
            tuple(GoldenAction.from_record(a) for a in rec["golden_actions"]),
            StateDigest.from_record(rec["golden_digest"]),
            rec["intent"],
            bool(rec["all_read"]),
        )


# --- walks -------------------------------------------------------------------


def walk_adjacency(bundle: DomainBundle) -> dict[str, list[str]]:
    """Outgoing neighbours per tool, falling back to undirected edges both ways."""
    adj: dict[str, set[str]] = {n: set() for n in bundle.tool_names}
    if bundle.graph_slice:
        for a, b in bundle.graph_slice:
            adj[a].add(b)
    else:
        for a, b, _ in bundle.undirected_slice:
            adj[a].add(b)
            adj[b].add(a)
    return {n: sorted(v) for n, v in adj.items()}


def sample_walk(bundle: DomainBundle, config: WalkConfig, start: str | None = None) -> list[str]:
    """Random walk from a seeded-uniform start until a sink or ``max_steps`` tools.

    Walks shorter than ``min_steps`` are resampled ``WALK_RETRIES`` times and
    then accepted with a warning.
    """
    if not bundle.tools:
        raise ValueError("bundle has no tools")
    adj = walk_adjacency(bundle)
    nodes = sorted(adj)
    rng = random.Random(config.seed)
    walk: list[str] = []
    for _ in range(WALK_RETRIES + 1):
        node = start if start is not None else rng.choice(nodes)
        walk = [node]
        while len(walk) < config.max_steps and adj[node]:
            node = rng.choice(adj[node])
            walk.append(node)
        if len(walk) >= config.min_steps:
            return walk
    log.warning("walk in %s shorter than min_steps=%d after %d retries", bundle.domain_id, config.min_steps, WALK_RETRIES)
    return walk


# --- argument generation -----------------------------------------------------


def _column_values(state: EnvironmentState, table: str, column: str) -> list[Any]:
    seen: list[Any] = []
    for row in state.rows(table):
        v = row.get(column)
        if v not in seen:
            seen.append(v)
    return seen


def _fresh_value(param: ParameterSpec, current: Any, rng: random.Random) -> Any:
    """A value of the parameter's type that differs from ``current`` when possible."""
    if param.ptype == "boolean" and isinstance(current, bool):
        return not current
    if param.ptype == "enum":
        options = [v for v in param.enum_values or () if v != current]
        return rng.choice(options) if options else current
    for _ in range(20):
        v = random_value(param, rng)
        if v != current:
            return v
    if param.ptype == "string":
        return f"{current}-{rng.choice(WORDS)}"
    if param.ptype in ("integer", "number"):
        return current + 1
    return v


class ArgGenerator:
    """Grounded default: selectors point at existing rows, updates really change them."""

    def __call__(
        self,
        tool: ToolSpec,
        impl: ToolImpl,
        state: EnvironmentState,
        table: TableSpec,
        rng: random.Random,
        hints: Mapping[str, Sequence[Any]] | None = None,
    ) -> tuple[dict[str, Any], str]:
        hints = hints or {}
        rows = state.rows(impl.target_table)
        kind = impl.effect.kind if impl.effect is not None else "read"
        args: dict[str, Any] = {}
        status = "ok"
        target_row = None
        if kind == "insert" or not rows:
            # no row to ground on: a fresh key, which is an error for update/delete
            for p, _ in impl.selector:
                args[p] = synthesize_pk(state, table)
            if kind in ("update", "delete"):
                status = "error"
        else:
            # prefer a row the previous step just returned
            by_pk = state.tables.get(impl.target_table, {})
            hinted = [by_pk[v] for p, _ in impl.selector for v in hints.get(p, ()) if _hashable(v) and v in by_pk]
            target_row = rng.choice(hinted) if hinted else rng.choice(rows)
            for p, col in impl.selector:
                args[p] = target_row[col]
        selector_params = {p for p, _ in impl.selector}
        assigned = dict(impl.effect.assignments) if impl.effect is not None else {}
        for p in tool.parameters:
            if p.name in selector_params:
                continue
            col = assigned.get(p.name, p.name)
            referenced = _referenced_keys(state, p.name)
            if kind == "update" and target_row is not None and p.name in assigned:
                value = _fresh_value(p, target_row.get(col), rng)
            elif [v for v in hints.get(p.name, ()) if v in referenced]:
                value = rng.choice([v for v in hints[p.name] if v in referenced])
            elif referenced:
                value = rng.choice(referenced)
            else:
                pool = [v for v in _column_values(state, impl.target_table, col) if conforms(v, p.ptype, p.enum_values)]
                value = rng.choice(pool) if pool and kind == "read" else random_value(p, rng)
            args[p.name] = value if conforms(value, p.ptype, p.enum_values) else random_value(p, rng)
        return args, status


def _hashable(v: Any) -> bool:
    return isinstance(v, (str, int, float, bool))


def payload_hints(payload: Any) -> dict[str, list[Any]]:
    """Column values from a tool result payload, keyed by column name, first-seen order."""
    out: dict[str, list[Any]] = {}
    for row in payload if isinstance(payload, list) else ():
        if isinstance(row, Mapping):
            for k, v in row.items():
                if _hashable(v) and v not in out.setdefault(k, []):
                    out[k].append(v)
    return out


def _referenced_keys(state: EnvironmentState, param: str) -> list[Any]:
    if not param.endswith("_id"):
        return []
    table = param[: -len("_id")]
    return sorted(state.tables.get(table, {}), key=str)


def generate_arguments(
    tool: ToolSpec,
    impl: ToolImpl,
    state: EnvironmentState,
    seed: int,
    generator: Callable[..., tuple[dict[str, Any], str]] | None = None,
    table: TableSpec | None = None,
    hints: Mapping[str, Sequence[Any]] | None = None,
) -> tuple[dict[str, Any], str]:
    """Arguments for one golden step plus the status they are expected to produce.

    ``table`` is the target table's spec; without it a string primary key
    named after the selector column is assumed. An update/delete against an
    empty table still gets arguments (with a synthesized key) and is marked
    ``error`` on purpose. ``hints`` maps parameter names to values returned by
    the previous step; grounded choices prefer them.
    """
    if table is None:
        pk = impl.selector[0][1] if impl.selector else f"{impl.target_table}_id"
        table = TableSpec(impl.target_table, pk, (ColumnSpec(pk, "string"),))
    return (generator or ArgGenerator())(tool, impl, state, table, random.Random(seed), hints)


# --- intents -----------------------------------------------------------------


def render_value(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False)


def operation_phrase(tool_name: str) -> str:
    return " ".join(name_tokens(tool_name))


def template_clause(action: GoldenAction) -> str:
    phrase = operation_phrase(action.tool_name)
    if not action.arguments:
        return phrase
    parts = ", ".join(f"{k} {render_value(v)}" for k, v in sorted(action.arguments.items()))
    return f"{phrase} using {parts}"


CLAUSE_LEADS = ("First, ", "Then, ", "Finally, ")
_CLAUSE_SPLIT = re.compile(r"(?<=\.) (?=(?:Then|Finally), )")


def template_intent(actions: Sequence[GoldenAction]) -> str:
    """One sentence per action, e.g. ``First, get order using order_id o1. Then, ...``."""
    out = []
    for i, a in enumerate(actions):
        lead = CLAUSE_LEADS[0] if i == 0 else (CLAUSE_LEADS[2] if i == len(actions) - 1 else CLAUSE_LEADS[1])
        out.append(f"{lead}{template_clause(a)}.")
    return " ".join(out)


def split_clauses(intent: str) -> list[str]:
    return [c for c in _CLAUSE_SPLIT.split(intent) if c]


def missing_values(text: str, actions: Sequence[GoldenAction]) -> list[str]:
    return [render_value(v) for a in actions for v in a.arguments.values() if render_value(v) not in text]


def compose_intent(
    actions: Sequence[GoldenAction],
    tools: Sequence[ToolSpec] = (),
    composer: Callable[[Sequence[GoldenAction], Sequence[ToolSpec]], str] | None = None,
) -> str:
    """Natural-language instruction covering every action.

    A custom composer may paraphrase, but its text must contain every
    argument value verbatim; otherwise the template is used instead.
    """
    if not actions:
        raise ValueError("cannot compose an intent for zero actions")
    if composer is not None:
        try:
            text = composer(actions, tools)
        except Exception as exc:  # noqa: BLE001
            log.warning("intent composer failed (%s); using template", exc)
        else:
            lost = missing_values(text, actions) if isinstance(text, str) else ["<non-text>"]
            if not lost:
                return text
            log.warning("composer dropped argument values %s; using template", lost)
    return template_intent(actions)


# --- task building -----------------------------------------------------------


class TaskBuildError(RuntimeError):
    """Golden replay did not reproduce the recorded digest (a bug, not bad data)."""


def build_task(
    bundle: DomainBundle,
    seed: int,
    walk_config: WalkConfig | None = None,
    composer: Callable[[Sequence[GoldenAction], Sequence[ToolSpec]], str] | None = None,
    rows_per_table: tuple[int, int] = (3, 6),
    arg_generator: Callable[..., tuple[dict[str, Any], str]] | None = None,
) -> AgenticTask:
    """Seed a state, walk the tool graph, execute each step, and fix the golden trace."""
    walk_config = walk_config or WalkConfig()
    rng = random.Random(seed)
    state_seed, walk_seed = rng.getrandbits(32), rng.getrandbits(32)
    seed_state = init_state(bundle.schema, state_seed, rows_per_table)
    walk = sample_walk(bundle, WalkConfig(walk_config.max_steps, walk_config.min_steps, walk_seed))
    state = seed_state
    actions: list[GoldenAction] = []
    hints: dict[str, list[Any]] = {}
    for name in walk:
        tool, impl = bundle.tool(name), bundle.impl(name)
        table = bundle.schema.table(impl.target_table)
        args, expected = generate_arguments(tool, impl, state, rng.getrandbits(32), arg_generator, table, hints)
        state, result = execute(state, bundle, ToolCall(name, args))
        hints = payload_hints(result.payload) if result.ok else {}
        if result.status != expected:
            log.debug("%s: predicted %s, got %s (%s)", name, expected, result.status, result.error_code)
        actions.append(GoldenAction(name, args, result.status))
    golden = digest(state)
    all_read = all(bundle.impl(a.tool_name).op_kind == "read" for a in actions)
    intent = compose_intent(actions, bundle.tools, composer)
    task = AgenticTask(f"{bundle.domain_id}-{seed}", bundle.domain_id, seed_state, tuple(actions), golden, intent, all_read)
    check_task(task, bundle)
    return task


def check_task(task: AgenticTask, bundle: DomainBundle) -> None:
    final, results = replay(task.seed_state, bundle, (a.to_call() for a in task.golden_actions))
    if digest(final) != task.golden_digest:
        raise TaskBuildError(f"{task.task_id}: golden replay digest mismatch")
    for a, r in zip(task.golden_actions, results):
        if r.status != a.expected_status:
            raise TaskBuildError(f"{task.task_id}: {a.tool_name} replayed as {r.status}, expected {a.expected_status}")


def task_seeds(seed: int, n: int) -> list[int]:
    rng = random.Random(seed)
    return [rng.getrandbits(31) for _ in range(n)]


def synthesize_tasks(
    bundles: Sequence[DomainBundle],
    num_tasks: int,
    seed: int,
    walk_config: WalkConfig | None = None,
    rows_per_table: tuple[int, int] = (3, 6),
    parallel: int = 1,
) -> list[AgenticTask]:
    """Build ``num_tasks`` tasks, assigning domains round-robin in ``domain_id`` order.

    Task ``i`` gets the ``i``-th seed drawn from ``seed``, so the output does
    not depend on ``parallel``.
    """
    if not bundles:
        raise ValueError("no domains to synthesize from")
    ordered = sorted(bundles, key=lambda b: b.domain_id)
    seeds = task_seeds(seed, num_tasks)

    def one(i: int) -> AgenticTask:
        return build_task(ordered[i % len(ordered)], seeds[i], walk_config, rows_per_table=rows_per_table)

    if parallel <= 1:
        return [one(i) for i in range(num_tasks)]
    with ThreadPoolExecutor(parallel) as pool:
        return list(pool.map(one, range(num_tasks)))
