"""Three-stage trajectory funnel: validity, state alignment, exact match."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .client import Message
from .interplay import Trajectory
from .materialize import DomainBundle
from .runtime import digest, replay
from .tasks import AgenticTask

STAGES = ("validity", "state_alignment", "exact_match")
EXACT_MATCH_MODES = ("all_read_only", "always")


@dataclass(frozen=True)
class FilterConfig:
    ngram_n: int = 8
    repetition_threshold: float = 0.5
    exact_match_mode: str = "all_read_only"
    digest_ignore_columns: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.ngram_n < 2:
            raise ValueError("ngram_n must be >= 2")
        if not 0.0 < self.repetition_threshold <= 1.0:
            raise ValueError("repetition_threshold must lie in (0, 1]")
        if self.exact_match_mode not in EXACT_MATCH_MODES:
            raise ValueError(f"exact_match_mode must be one of {EXACT_MATCH_MODES}")

    def to_record(self) -> dict[str, Any]:
        return {
            "ngram_n": self.ngram_n,
            "repetition_threshold": self.repetition_threshold,
            "exact_match_mode": self.exact_match_mode,
            "digest_ignore_columns": list(self.digest_ignore_columns),
        }


@dataclass(frozen=True)
class FilterVerdict:
    stage: str
    passed: bool
    reason: str = ""

    def __post_init__(self) -> None:
        if not self.passed and not self.reason:
            raise ValueError("a failed verdict needs a reason")

    def to_record(self) -> dict[str, Any]:
        return {"stage": self.stage, "passed": self.passed, "reason": self.reason}


@dataclass(frozen=True)
class FunnelResult:
    kept: bool
    verdicts: tuple[FilterVerdict, ...]

    def to_record(self, task_id: str) -> dict[str, Any]:
        return {"task_id": task_id, "kept": self.kept, "verdicts": [v.to_record() for v in self.verdicts]}


# --- validity ----------------------------------------------------------------


def ngram_repetition(text: str, n: int) -> float:
    """Share of whitespace-token n-grams that repeat an earlier n-gram in the text.

    0 for text with fewer than ``n`` tokens; close to 1 for a phrase looped
    many times.
    """
    toks = text.split()
    if len(toks) < n:
        return 0.0
    grams = [tuple(toks[i : i + n]) for i in range(len(toks) - n + 1)]
    return 1.0 - len(set(grams)) / len(grams)


def structure_problems(messages: Sequence[Message]) -> str | None:
    """Reason string for the first structural defect, or None."""
    i = 0
    while i < len(messages) and messages[i].role == "system":
        i += 1
    if i == len(messages) or messages[i].role != "user":
        return "alternation: conversation must open with a user message"
    pending: set[str] = set()
    answered: set[str] = set()
    prev_role = None
    saw_assistant_since_user = True
    for m in messages[i:]:
        if m.role == "system":
            return "alternation: system message inside the conversation"
        if m.role == "user":
            if pending:
                return "dangling_tool_call: call(s) without response before user turn"
            if not saw_assistant_since_user:
                return "alternation: consecutive user messages"
            saw_assistant_since_user = False
        elif m.role == "assistant":
            if pending:
                return "dangling_tool_call: call(s) without response before assistant turn"
            saw_assistant_since_user = True
            for c in m.tool_calls or ():
                if c.call_id is None or c.call_id in pending or c.call_id in answered:
                    return "dangling_tool_call: missing or repeated call id"
                pending.add(c.call_id)
        elif m.role == "tool":
            if prev_role not in ("assistant", "tool"):
                return "alternation: tool message outside a tool-call turn"
            if m.tool_call_id not in pending:
                return "dangling_tool_call: response without a matching call"
            pending.discard(m.tool_call_id)
            answered.add(m.tool_call_id)
        prev_role = m.role
    if pending:
        return "dangling_tool_call: call(s) without response at end"
    return None


def check_validity(traj: Trajectory, config: FilterConfig = FilterConfig()) -> FilterVerdict:
    if traj.terminal_reason == "client_failure":
        return FilterVerdict("validity", False, "client_failure")
    problem = structure_problems(traj.messages)
    if problem is not None:
        return FilterVerdict("validity", False, problem)
    for k, m in enumerate(traj.messages):
        if m.role != "assistant":
            continue
        score = ngram_repetition(m.content, config.ngram_n)
        if score > config.repetition_threshold:
            return FilterVerdict("validity", False, f"ngram_repetition: message {k} scores {score:.3f}")
    return FilterVerdict("validity", True)


# --- state alignment ---------------------------------------------------------


def check_state_alignment(
    traj: Trajectory, task: AgenticTask, bundle: DomainBundle, config: FilterConfig = FilterConfig()
) -> FilterVerdict:
    """Re-execute the trajectory's calls from the seed state and compare digests.

    The recorded ``final_digest`` is not trusted. With ignored columns the
    golden reference is recomputed under the same mask.
    """
    ignore = config.digest_ignore_columns
    try:
        final, _ = replay(task.seed_state, bundle, traj.tool_calls())
        got = digest(final, ignore)
        if ignore:
            gold_state, _ = replay(task.seed_state, bundle, (a.to_call() for a in task.golden_actions))
            want = digest(gold_state, ignore)
        else:
            want = task.golden_digest
    except Exception as exc:  # noqa: BLE001 - any replay crash is a failed verdict
        return FilterVerdict("state_alignment", False, f"replay_error: {exc}")
    if got.hex != want.hex or got.algorithm != want.algorithm:
        return FilterVerdict("state_alignment", False, "state_mismatch")
    return FilterVerdict("state_alignment", True)


# --- exact match -------------------------------------------------------------


def canonical_value(v: Any) -> Any:
    # Booleans are tagged: Python would otherwise let True equal the number 1.
    if isinstance(v, bool):
        return ("bool", v)
    if v is None or isinstance(v, str):
        return v
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, Mapping):
        return tuple(sorted((str(k), canonical_value(x)) for k, x in v.items()))
    if isinstance(v, (list, tuple)):
        return tuple(canonical_value(x) for x in v)
    return repr(v)


def canonical_call(name: str, args: Mapping[str, Any]) -> tuple[str, Any]:
    """Tool name plus key-sorted arguments; numbers compared by value, strings verbatim."""
    return (name, canonical_value(dict(args)))


def exact_match_applies(task: AgenticTask, config: FilterConfig) -> bool:
    return config.exact_match_mode == "always" or task.all_read


def check_exact_match(traj: Trajectory, task: AgenticTask, config: FilterConfig = FilterConfig()) -> FilterVerdict:
    got = [canonical_call(c.tool_name, c.arguments) for c in traj.tool_calls()]
    want = [canonical_call(a.tool_name, a.arguments) for a in task.golden_actions]
    if got == want:
        return FilterVerdict("exact_match", True)
    if len(got) != len(want):
        return FilterVerdict("exact_match", False, f"call_count_mismatch: {len(got)} != {len(want)}")
    first = next(i for i, (g, w) in enumerate(zip(got, want)) if g != w)
    return FilterVerdict("exact_match", False, f"call_mismatch at position {first}")


def run_funnel(
    traj: Trajectory, task: AgenticTask, bundle: DomainBundle, config: FilterConfig = FilterConfig()
) -> FunnelResult:
    """Validity, then state alignment, then (when applicable) exact match; stops at the first failure.

    Error results inside the trajectory are not a rejection reason by themselves.
    """
    verdicts = [check_validity(traj, config)]
    if verdicts[-1].passed:
        verdicts.append(check_state_alignment(traj, task, bundle, config))
    if verdicts[-1].passed and exact_match_applies(task, config):
        verdicts.append(check_exact_match(traj, task, config))
    return FunnelResult(all(v.passed for v in verdicts), tuple(verdicts))
