"""Shared fixtures-as-functions: the reference fixture environment and trajectory mutations."""

from __future__ import annotations

import random
from dataclasses import replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Sequence

from toolenv.catalog import ParameterSpec, ToolCatalog, read_catalog
from toolenv.client import Message
from toolenv.community import detect_communities
from toolenv.graph import GraphConfig, pairwise_edges
from toolenv.interplay import EpisodeLimits, Trajectory, make_scripted_user, run_episode
from toolenv.materialize import DomainBundle, build_domains
from toolenv.runtime import ToolCall, replay
from toolenv.tasks import AgenticTask, WalkConfig, generate_arguments, synthesize_tasks

FIXTURES = Path(__file__).parent / "fixtures"
TOOLS50 = FIXTURES / "tools50.jsonl"

# similarity threshold at which the 50-tool fixture splits into domain-sized communities
FIXTURE_TAU = 0.4
FIXTURE_SEED = 7
FIXTURE_MIN_DOMAIN = 2
NUM_TASKS = 100

PIPELINE_CONFIG: dict[str, Any] = {
    "seed": FIXTURE_SEED,
    "graph": {"tau": FIXTURE_TAU},
    "domains": {"min_size": FIXTURE_MIN_DOMAIN},
    "tasks": {"num_tasks": NUM_TASKS},
    "play": {"chunks": 2},
}


def fixture_catalog() -> ToolCatalog:
    catalog, rejected = read_catalog(TOOLS50)
    assert not rejected
    return catalog


@lru_cache(maxsize=None)
def fixture_world() -> tuple[dict[str, DomainBundle], list[AgenticTask]]:
    """Bundles and 100 tasks built in memory from the fixture catalog."""
    catalog = fixture_catalog()
    config = GraphConfig(tau=FIXTURE_TAU, seed=FIXTURE_SEED)
    graph = pairwise_edges(catalog, config)
    partition = detect_communities(graph, config)
    built = build_domains(catalog, graph, partition, min_size=FIXTURE_MIN_DOMAIN)
    tasks = synthesize_tasks(built.bundles, NUM_TASKS, FIXTURE_SEED, WalkConfig())
    return {b.domain_id: b for b in built.bundles}, tasks


class CallListAgent:
    """Agent double that issues a fixed list of calls, one per turn, then closes."""

    def __init__(self, calls: Sequence[ToolCall], closing: str = "Done.") -> None:
        self.calls = list(calls)
        self.closing = closing

    def complete(self, messages, tools) -> Message:
        done = sum(1 for m in messages if m.role == "assistant" and m.tool_calls)
        if done < len(self.calls):
            c = self.calls[done]
            return Message("assistant", "", (ToolCall(c.tool_name, dict(c.arguments), f"call_{done}"),))
        return Message("assistant", self.closing)


def play_calls(task: AgenticTask, bundle: DomainBundle, calls: Sequence[ToolCall]) -> Trajectory:
    """A real episode whose agent issues exactly ``calls``."""
    limits = EpisodeLimits()
    return run_episode(task, bundle, CallListAgent(calls), make_scripted_user(task, 2, limits), limits)


# --- mutations ---------------------------------------------------------------


def other_value(param: ParameterSpec, value: Any) -> Any:
    """A well-typed value different from ``value``."""
    if param.ptype == "boolean":
        return not value
    if param.ptype == "enum":
        options = list(param.enum_values or ())
        return options[(options.index(value) + 1) % len(options)]
    if param.ptype == "integer":
        return value + 1
    if param.ptype == "number":
        return value + 1.5
    if param.ptype == "array":
        return list(value) + ["mutated"]
    return f"{value}_mutated"


def _write_positions(task: AgenticTask, bundle: DomainBundle) -> list[int]:
    return [i for i, a in enumerate(task.golden_actions) if bundle.impl(a.tool_name).op_kind == "write"]


def mutation_target(task: AgenticTask, bundle: DomainBundle) -> int:
    """Index of the golden call a mutation touches: the last write, or the last call of an all-read task."""
    writes = _write_positions(task, bundle)
    return writes[-1] if writes else len(task.golden_actions) - 1


def golden_calls(task: AgenticTask) -> list[ToolCall]:
    return [a.to_call() for a in task.golden_actions]


def perturb_argument(task: AgenticTask, bundle: DomainBundle) -> list[ToolCall]:
    """(a) change one argument of the target call; assigned payload first, else the selector."""
    calls = golden_calls(task)
    i = mutation_target(task, bundle)
    call = calls[i]
    tool, impl = bundle.tool(call.tool_name), bundle.impl(call.tool_name)
    assigned = [p for p, _ in impl.effect.assignments] if impl.effect is not None else []
    candidates = [p for p in assigned if p in call.arguments] or [p for p, _ in impl.selector if p in call.arguments]
    candidates = candidates or sorted(call.arguments)
    name = candidates[0]
    args = dict(call.arguments)
    args[name] = other_value(tool.param(name), args[name])
    calls[i] = ToolCall(call.tool_name, args)
    return calls


def drop_call(task: AgenticTask, bundle: DomainBundle) -> list[ToolCall]:
    """(b) remove the target call."""
    calls = golden_calls(task)
    del calls[mutation_target(task, bundle)]
    return calls


def _duplicate_args(task: AgenticTask, bundle: DomainBundle, calls: list[ToolCall], i: int) -> dict[str, Any] | None:
    """Arguments that aim a copy of call ``i`` at a fresh row, or None if no such row exists."""
    call = calls[i]
    impl = bundle.impl(call.tool_name)
    table = bundle.schema.table(impl.target_table)
    args = dict(call.arguments)
    if impl.effect.kind == "insert":
        for p, c in impl.selector:
            if c == table.primary_key:
                args[p] = f"{args[p]}_dup" if isinstance(args[p], str) else args[p] + 1000
        return args
    after, _ = replay(task.seed_state, bundle, calls[: i + 1])
    sel = dict(impl.selector)
    assigned = dict(impl.effect.assignments)
    current = {c: args[p] for p, c in sel.items()}
    for row in after.rows(table.name):
        if all(row[c] == v for c, v in current.items()):
            continue
        changes = [row[assigned[p]] != args[p] for p in assigned if p in args]
        if changes and not any(changes):
            continue
        for p, c in sel.items():
            args[p] = row[c]
        return args
    return None


def duplicate_call(task: AgenticTask, bundle: DomainBundle) -> list[ToolCall] | None:
    """(c) repeat one call right after itself, aimed at a fresh row.

    Write tasks duplicate their last insert (the environment or an explicit
    new key gives it a fresh primary key). Without an insert, the last update
    or delete is re-aimed at another existing row it would actually change.
    All-read tasks duplicate their last call verbatim.

    Returns None when no write can be duplicated onto a row it would change
    (for example every other row already holds the assigned value). Such a
    copy is idempotent on the database, so it is not a state mutation at all.
    """
    calls = golden_calls(task)
    writes = _write_positions(task, bundle)
    if not writes:
        i = len(calls) - 1
        calls.insert(i + 1, calls[i])
        return calls
    inserts = [i for i in writes if bundle.impl(calls[i].tool_name).effect.kind == "insert"]
    for i in reversed(inserts or writes):
        args = _duplicate_args(task, bundle, calls, i)
        if args is not None:
            calls.insert(i + 1, ToolCall(calls[i].tool_name, args))
            return calls
    return None


def break_alternation(traj: Trajectory) -> Trajectory:
    """(d) a second user message straight after the first one."""
    msgs = list(traj.messages)
    k = next(i for i, m in enumerate(msgs) if m.role == "user")
    msgs.insert(k + 1, Message("user", "Also, one more thing before you start."))
    return replace(traj, messages=tuple(msgs))


def inject_repetition(traj: Trajectory, times: int = 50) -> Trajectory:
    """(e) append a 5-gram repeated ``times`` times to the last assistant text."""
    msgs = list(traj.messages)
    k = max(i for i, m in enumerate(msgs) if m.role == "assistant")
    block = " ".join(["please wait while I check"] * times)
    msgs[k] = replace(msgs[k], content=f"{msgs[k].content} {block}".strip())
    return replace(traj, messages=tuple(msgs))


def append_read(task: AgenticTask, bundle: DomainBundle, seed: int = 0) -> list[ToolCall] | None:
    """Golden calls plus one trailing call to a read tool of the domain, or None if it has none."""
    reads = [i.tool_name for i in bundle.impls if i.op_kind == "read"]
    if not reads:
        return None
    rng = random.Random(seed)
    name = rng.choice(sorted(reads))
    final, _ = replay(task.seed_state, bundle, golden_calls(task))
    args, _ = generate_arguments(bundle.tool(name), bundle.impl(name), final, seed)
    return golden_calls(task) + [ToolCall(name, args)]
