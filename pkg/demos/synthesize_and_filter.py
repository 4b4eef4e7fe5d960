"""Synthesize one verifiable task, play it, and watch the funnel judge variants.

Run from the repository root:

    python3 demos/synthesize_and_filter.py [--task-index 0]

The golden episode is kept. A copy that skips the last write is caught by
state alignment, and a copy with a looping assistant message is caught by
the validity check before any state is compared.
"""

from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path

from toolenv.catalog import read_catalog
from toolenv.client import Message
from toolenv.community import detect_communities
from toolenv.export import to_training_sample
from toolenv.filtering import run_funnel
from toolenv.graph import GraphConfig, pairwise_edges
from toolenv.interplay import make_replay_agent, make_scripted_user, run_episode
from toolenv.materialize import build_domains
from toolenv.runtime import ToolCall
from toolenv.tasks import synthesize_tasks

CATALOG = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "tools50.jsonl"


class ScriptedAgent:
    """Issues a fixed call list, one call per turn, then signs off."""

    def __init__(self, calls: list[ToolCall]) -> None:
        self.calls = calls

    def complete(self, messages, tools) -> Message:
        done = sum(1 for m in messages if m.role == "assistant" and m.tool_calls)
        if done < len(self.calls):
            c = self.calls[done]
            return Message("assistant", "", (ToolCall(c.tool_name, dict(c.arguments), f"call_{done}"),))
        return Message("assistant", "All done.")


def verdict_line(label: str, result) -> str:
    last = result.verdicts[-1]
    outcome = "kept" if result.kept else f"rejected at {last.stage} ({last.reason})"
    return f"{label:<22} {outcome}"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task-index", type=int, default=0)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    catalog, _ = read_catalog(CATALOG)
    config = GraphConfig(tau=0.4)
    graph = pairwise_edges(catalog, config)
    built = build_domains(catalog, graph, detect_communities(graph, config), min_size=2)
    bundles = {b.domain_id: b for b in built.bundles}
    tasks = synthesize_tasks(built.bundles, 20, args.seed)
    writes = [t for t in tasks if not t.all_read]
    task = writes[args.task_index % len(writes)]
    bundle = bundles[task.domain_id]

    print(f"task {task.task_id} in {task.domain_id}")
    print(f"intent: {task.intent_text}")
    for a in task.golden_actions:
        print(f"  golden: {a.tool_name}({a.arguments}) -> {a.expected_status}")

    golden = run_episode(task, bundle, make_replay_agent(task), make_scripted_user(task, 2))
    print(f"\nepisode ended with {golden.terminal_reason}, {golden.tool_call_count} tool calls")
    print(verdict_line("golden episode", run_funnel(golden, task, bundle)))

    calls = [a.to_call() for a in task.golden_actions]
    last_write = max(i for i, a in enumerate(task.golden_actions) if bundle.impl(a.tool_name).op_kind == "write")
    skipped = calls[:last_write] + calls[last_write + 1:]
    short = run_episode(task, bundle, ScriptedAgent(skipped), make_scripted_user(task, 2))
    print(verdict_line("last write skipped", run_funnel(short, task, bundle)))

    msgs = list(golden.messages)
    k = max(i for i, m in enumerate(msgs) if m.role == "assistant")
    msgs[k] = replace(msgs[k], content=" ".join(["let me check that for you"] * 30))
    looping = replace(golden, messages=tuple(msgs))
    print(verdict_line("looping reply", run_funnel(looping, task, bundle)))

    sample = to_training_sample(golden)
    print("\nexport labels:")
    for m, label in zip(sample.messages, sample.supervision):
        text = m.content or ", ".join(c.tool_name for c in m.tool_calls)
        print(f"  {label:<10} {m.role:<9} {text[:60]}")


if __name__ == "__main__":
    main()
