"""Simulated user-agent episodes over an environment, recorded as trajectories."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from typing import Any, Callable, Mapping, Sequence

from .catalog import ToolSpec
from .client import Message, ModelClient, ModelClientError
from .materialize import DomainBundle
from .runtime import StateDigest, ToolCall, digest, execute
from .tasks import AgenticTask, split_clauses

log = logging.getLogger(__name__)

PROMPT_VERSION = "v1"
TERMINAL_REASONS = ("user_done", "turn_cap", "agent_stop", "client_failure")


@dataclass(frozen=True)
class EpisodeLimits:
    max_turns: int = 30
    max_tool_calls: int = 20
    user_done_token: str = "###STOP###"

    def __post_init__(self) -> None:
        if self.max_turns <= 0 or self.max_tool_calls <= 0 or not self.user_done_token:
            raise ValueError("episode limits must be positive and the done token non-empty")


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    messages: tuple[Message, ...]
    terminal_reason: str
    final_digest: StateDigest
    tool_call_count: int
    trial: int = 0

    def tool_calls(self) -> list[ToolCall]:
        return [c for m in self.messages if m.role == "assistant" and m.tool_calls for c in m.tool_calls]

    def to_record(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "trial": self.trial,
            "messages": [m.to_record() for m in self.messages],
            "terminal_reason": self.terminal_reason,
            "final_digest": self.final_digest.to_record(),
            "tool_call_count": self.tool_call_count,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Trajectory":
        return cls(
            rec["task_id"],
            tuple(Message.from_record(m) for m in rec["messages"]),
            rec["terminal_reason"],
            StateDigest.from_record(rec["final_digest"]),
            int(rec["tool_call_count"]),
            int(rec.get("trial", 0)),
        )


def load_prompt(name: str, version: str = PROMPT_VERSION) -> str:
    return resources.files("toolenv").joinpath("prompts", f"{name}_{version}.txt").read_text(encoding="utf-8")


def agent_system_prompt(bundle: DomainBundle) -> str:
    return load_prompt("agent").format(domain_id=bundle.domain_id).strip()


def user_system_prompt(task: AgenticTask, limits: EpisodeLimits) -> str:
    return load_prompt("user").format(intent=task.intent_text, done_token=limits.user_done_token).strip()


def user_view(messages: Sequence[Message], task: AgenticTask, limits: EpisodeLimits) -> list[Message]:
    """The conversation as the simulated user sees it: roles swapped, tool traffic hidden."""
    view = [Message("system", user_system_prompt(task, limits))]
    for m in messages:
        if m.role == "user":
            view.append(Message("assistant", m.content))
        elif m.role == "assistant" and m.content:
            view.append(Message("user", m.content))
    return view


def run_episode(
    task: AgenticTask,
    bundle: DomainBundle,
    agent: ModelClient,
    user: ModelClient,
    limits: EpisodeLimits = EpisodeLimits(),
    trial: int = 0,
) -> Trajectory:
    """Alternate user and agent turns until the user is done or a cap is hit.

    The agent may chain tool calls within one turn; each call is executed
    against the episode's own state and answered with a tool message, errors
    included. A client that fails after its retries ends the episode with
    ``client_failure``.
    """
    state = task.seed_state
    messages: list[Message] = [Message("system", agent_system_prompt(bundle))]
    n_calls = 0
    turns = 0
    reason: str | None = None
    while reason is None:
        try:
            reply = user.complete(user_view(messages, task, limits), [])
        except ModelClientError as exc:
            log.warning("%s: user client failed: %s", task.task_id, exc)
            reason = "client_failure"
            break
        messages.append(Message("user", reply.content))
        if limits.user_done_token in reply.content:
            reason = "user_done"
            break
        turns += 1
        while True:
            try:
                out = agent.complete(list(messages), bundle.tools)
            except ModelClientError as exc:
                log.warning("%s: agent client failed: %s", task.task_id, exc)
                reason = "client_failure"
                break
            calls = tuple(
                ToolCall(c.tool_name, c.arguments, c.call_id or f"call_{n_calls + i}")
                for i, c in enumerate(out.tool_calls or ())
            )
            messages.append(Message("assistant", out.content, calls or None))
            if not calls:
                if not out.content.strip():
                    reason = "agent_stop"
                break
            for call in calls:
                state, result = execute(state, bundle, call)
                messages.append(Message("tool", result.to_text(), tool_call_id=call.call_id))
            n_calls += len(calls)
            if n_calls >= limits.max_tool_calls:
                reason = "turn_cap"
                break
        if reason is None and turns >= limits.max_turns:
            reason = "turn_cap"
    return Trajectory(task.task_id, tuple(messages), reason, digest(state), n_calls, trial)


# --- deterministic test doubles ---------------------------------------------


class ReplayAgent:
    """Emits the task's golden actions one per assistant turn, then a closing reply."""

    closing = "All requested operations have been completed."

    def __init__(self, task: AgenticTask) -> None:
        self.actions = task.golden_actions

    def complete(self, messages: Sequence[Message], tools: Sequence[ToolSpec]) -> Message:
        done = sum(1 for m in messages if m.role == "assistant" and m.tool_calls)
        if done < len(self.actions):
            return Message("assistant", "", (self.actions[done].to_call(f"call_{done}"),))
        return Message("assistant", self.closing)


def make_replay_agent(task: AgenticTask) -> ReplayAgent:
    return ReplayAgent(task)


def chunk_intent(intent: str, chunks: int) -> list[str]:
    """Split an intent into at most ``chunks`` utterances along clause boundaries."""
    if chunks < 1:
        raise ValueError("chunks must be >= 1")
    clauses = split_clauses(intent) or [intent]
    k = min(chunks, len(clauses))
    size, extra = divmod(len(clauses), k)
    out, i = [], 0
    for j in range(k):
        n = size + (1 if j < extra else 0)
        out.append(" ".join(clauses[i : i + n]))
        i += n
    return out


class ScriptedUser:
    """Reveals the intent chunk by chunk, then says the done token once."""

    def __init__(self, task: AgenticTask, chunks: int = 1, done_token: str = EpisodeLimits.user_done_token) -> None:
        self.parts = chunk_intent(task.intent_text, chunks)
        self.done_token = done_token

    def complete(self, messages: Sequence[Message], tools: Sequence[ToolSpec]) -> Message:
        # in the user's view its own past utterances carry the assistant role
        said = sum(1 for m in messages if m.role == "assistant")
        if said < len(self.parts):
            return Message("assistant", self.parts[said])
        return Message("assistant", f"Thanks, that is everything. {self.done_token}")


def make_scripted_user(task: AgenticTask, chunks: int = 1, limits: EpisodeLimits = EpisodeLimits()) -> ScriptedUser:
    return ScriptedUser(task, chunks, limits.user_done_token)


def run_episodes(
    jobs: Sequence[tuple[AgenticTask, DomainBundle, int]],
    agent_factory: Callable[[AgenticTask], ModelClient],
    user_factory: Callable[[AgenticTask], ModelClient],
    limits: EpisodeLimits = EpisodeLimits(),
    parallel: int = 1,
) -> list[Trajectory]:
    """Run ``(task, bundle, trial)`` jobs on a bounded pool; output keeps job order."""

    def one(job: tuple[AgenticTask, DomainBundle, int]) -> Trajectory:
        task, bundle, trial = job
        return run_episode(task, bundle, agent_factory(task), user_factory(task), limits, trial)

    if parallel <= 1:
        return [one(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(one, jobs))
