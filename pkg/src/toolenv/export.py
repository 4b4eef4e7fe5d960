"""Loss-mask labelled training export and evaluation analytics (pass^k, accuracy by depth)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .client import Message
from .interplay import Trajectory

STAGE_TAGS = ("stage1_general", "stage2_domain")
SUPERVISED_ROLES = frozenset({"assistant"})


class NothingToSupervise(ValueError):
    code = "nothing_to_supervise"


@dataclass(frozen=True)
class TrainingSample:
    task_id: str
    messages: tuple[Message, ...]
    supervision: tuple[str, ...]
    stage_tag: str = "stage1_general"

    def __post_init__(self) -> None:
        if len(self.supervision) != len(self.messages):
            raise ValueError("one supervision label per message")
        if self.stage_tag not in STAGE_TAGS:
            raise ValueError(f"stage_tag must be one of {STAGE_TAGS}")

    def to_record(self) -> dict[str, Any]:
        msgs = []
        for m, label in zip(self.messages, self.supervision):
            rec = m.to_record()
            rec["supervised"] = label == "supervised"
            msgs.append(rec)
        return {"task_id": self.task_id, "stage": self.stage_tag, "messages": msgs}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "TrainingSample":
        msgs = tuple(Message.from_record(m) for m in rec["messages"])
        labels = tuple("supervised" if m["supervised"] else "masked" for m in rec["messages"])
        return cls(rec["task_id"], msgs, labels, rec["stage"])


def to_training_sample(traj: Trajectory, stage_tag: str = "stage1_general") -> TrainingSample:
    """Label assistant turns (tool calls and replies) supervised; everything else masked.

    Masked messages stay in the sample as context.
    """
    labels = tuple("supervised" if m.role in SUPERVISED_ROLES else "masked" for m in traj.messages)
    if "supervised" not in labels:
        raise NothingToSupervise(f"{traj.task_id}: trajectory has no assistant messages")
    return TrainingSample(traj.task_id, traj.messages, labels, stage_tag)


def supervised_char_fraction(sample: TrainingSample) -> float:
    """Share of message characters (content plus serialized tool calls) under supervision."""
    def size(m: Message) -> int:
        n = len(m.content)
        if m.tool_calls:
            n += len(json.dumps([c.to_record() for c in m.tool_calls], sort_keys=True))
        return n

    total = sum(size(m) for m in sample.messages)
    sup = sum(size(m) for m, lab in zip(sample.messages, sample.supervision) if lab == "supervised")
    return sup / total if total else 0.0


# --- evaluation --------------------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    task_id: str
    n_trials: int
    n_successes: int
    tool_call_counts: tuple[int, ...] = ()
    successes: tuple[bool, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.n_successes <= self.n_trials:
            raise ValueError("need 0 <= n_successes <= n_trials")
        if self.successes and (len(self.successes) != self.n_trials or sum(self.successes) != self.n_successes):
            raise ValueError("per-trial success flags disagree with the counts")
        if self.tool_call_counts and len(self.tool_call_counts) != self.n_trials:
            raise ValueError("one tool-call count per trial")

    @classmethod
    def from_trials(cls, task_id: str, successes: Sequence[bool], tool_call_counts: Sequence[int]) -> "EvalRecord":
        return cls(task_id, len(successes), sum(bool(s) for s in successes), tuple(tool_call_counts), tuple(map(bool, successes)))


def pass_hat_k_exact(n: int, c: int, k: int) -> Fraction:
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n_trials, got k={k}, n={n}")
    return Fraction(math.comb(c, k), math.comb(n, k))


def pass_hat_k(record: EvalRecord, k: int) -> float:
    """Unbiased estimate of P(all k trials succeed): C(c, k) / C(n, k)."""
    return float(pass_hat_k_exact(record.n_trials, record.n_successes, k))


def pass_k_curve(records: Sequence[EvalRecord], ks: Iterable[int] | None = None) -> dict[int, float]:
    """Mean pass^k over tasks for each k up to the smallest trial count."""
    if not records:
        return {}
    kmax = min(r.n_trials for r in records)
    ks = list(ks) if ks is not None else list(range(1, kmax + 1))
    curve = {}
    for k in ks:
        total = sum((pass_hat_k_exact(r.n_trials, r.n_successes, k) for r in records), Fraction(0))
        curve[k] = float(total / len(records))
    return curve


@dataclass(frozen=True)
class DepthReport:
    buckets: dict[int, float] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)
    trend_slope: float | None = None
    trend_intercept: float | None = None


def accuracy_by_depth(records: Sequence[EvalRecord], bucket_width: int = 1) -> DepthReport:
    """Per-bucket accuracy over tool-call counts and a least-squares line through (count, success)."""
    if bucket_width < 1:
        raise ValueError("bucket_width must be >= 1")
    xs: list[int] = []
    ys: list[float] = []
    for r in records:
        if len(r.successes) != r.n_trials or len(r.tool_call_counts) != r.n_trials:
            raise ValueError(f"{r.task_id}: per-trial counts and success flags are required")
        xs.extend(r.tool_call_counts)
        ys.extend(1.0 if s else 0.0 for s in r.successes)
    if not xs:
        return DepthReport()
    hits: dict[int, list[float]] = {}
    for x, y in zip(xs, ys):
        hits.setdefault((x // bucket_width) * bucket_width, []).append(y)
    buckets = {b: sum(v) / len(v) for b, v in sorted(hits.items())}
    counts = {b: len(v) for b, v in sorted(hits.items())}
    x = np.asarray(xs, dtype=np.float64)
    if np.ptp(x) == 0:
        return DepthReport(buckets, counts)
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, np.asarray(ys), rcond=None)
    return DepthReport(buckets, counts, float(slope), float(intercept))


@dataclass(frozen=True)
class EvalReport:
    pass_k: dict[int, float]
    depth: DepthReport
    totals: dict[str, Any]

    def to_record(self) -> dict[str, Any]:
        return {
            "pass_k": {str(k): v for k, v in self.pass_k.items()},
            "accuracy_by_depth": {str(b): v for b, v in self.depth.buckets.items()},
            "trials_by_depth": {str(b): v for b, v in self.depth.counts.items()},
            "trend_slope": self.depth.trend_slope,
            "trend_intercept": self.depth.trend_intercept,
            "totals": self.totals,
        }


def build_eval_report(records: Sequence[EvalRecord], bucket_width: int = 1) -> EvalReport:
    totals = {
        "tasks": len(records),
        "trials": sum(r.n_trials for r in records),
        "successes": sum(r.n_successes for r in records),
    }
    return EvalReport(pass_k_curve(records), accuracy_by_depth(records, bucket_width), totals)
