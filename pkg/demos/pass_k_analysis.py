"""How pass^k separates a consistent agent from a lucky one.

Run:

    python3 demos/pass_k_analysis.py

Two simulated agents have the same single-trial accuracy. One succeeds on a
fixed subset of tasks every time; the other succeeds at random. Their pass^1
agrees, but pass^k pulls them apart as k grows. The second half simulates
an agent that gets worse with longer tool-call chains and reports the fitted
accuracy trend.
"""

from __future__ import annotations

import random

from toolenv.export import EvalRecord, accuracy_by_depth, pass_k_curve

TRIALS = 8
TASKS = 200


def consistent(rng: random.Random) -> list[EvalRecord]:
    # 60% of tasks always solved, the rest never
    return [EvalRecord(f"t{i}", TRIALS, TRIALS if rng.random() < 0.6 else 0) for i in range(TASKS)]


def erratic(rng: random.Random) -> list[EvalRecord]:
    # every task solved independently 60% of the time
    return [EvalRecord(f"t{i}", TRIALS, sum(rng.random() < 0.6 for _ in range(TRIALS))) for i in range(TASKS)]


def depth_limited(rng: random.Random) -> list[EvalRecord]:
    records = []
    for i in range(TASKS):
        depth = rng.randint(1, 8)
        wins = [rng.random() < 0.95 - 0.1 * depth for _ in range(4)]
        records.append(EvalRecord.from_trials(f"t{i}", wins, [depth] * 4))
    return records


def main() -> None:
    rng = random.Random(11)
    a, b = pass_k_curve(consistent(rng)), pass_k_curve(erratic(rng))
    print(" k   consistent   erratic")
    for k in a:
        print(f"{k:>2}   {a[k]:10.3f}   {b[k]:7.3f}")

    report = accuracy_by_depth(depth_limited(rng))
    print("\ntool calls   accuracy   trials")
    for depth, acc in report.buckets.items():
        print(f"{depth:>10}   {acc:8.2f}   {report.counts[depth]:6d}")
    print(f"least-squares trend: {report.trend_slope:+.3f} accuracy per extra call")


if __name__ == "__main__":
    main()
