"""Deterministic Louvain community detection and weighted Newman modularity.

Tie-breaking is fixed so results are reproducible: nodes are visited in
ascending name order (super-nodes in community-id order), equal-gain moves
go to the lowest community id, and a level stops when a full pass improves
modularity by less than ``MIN_GAIN``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .graph import GraphConfig, ToolGraph

MIN_GAIN = 1e-12


@dataclass(frozen=True)
class DomainPartition:
    communities: tuple[tuple[str, ...], ...]
    modularity: float = 0.0

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for c in self.communities:
            if not c:
                raise ValueError("empty community")
            if seen.intersection(c):
                raise ValueError("communities overlap")
            seen.update(c)

    @property
    def nodes(self) -> set[str]:
        return {n for c in self.communities for n in c}

    def membership(self) -> dict[str, int]:
        return {n: i for i, c in enumerate(self.communities) for n in c}

    def to_record(self) -> dict[str, Any]:
        return {"communities": [list(c) for c in self.communities], "modularity": self.modularity}

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "DomainPartition":
        return cls(tuple(tuple(c) for c in rec["communities"]), float(rec["modularity"]))


def canonical_communities(groups: Iterable[Iterable[str]]) -> tuple[tuple[str, ...], ...]:
    """Sort members within each group, then groups by their smallest member."""
    out = [tuple(sorted(g)) for g in groups if g]
    return tuple(sorted(out))


def modularity(graph: ToolGraph, partition: DomainPartition | Sequence[Iterable[str]]) -> float:
    """Weighted Newman modularity Q = sum_c [L_c / m - (d_c / 2m)^2].

    ``L_c`` is the internal edge weight of community ``c``, ``d_c`` its total
    strength and ``m`` the total edge weight. An edgeless graph scores 0.
    """
    groups = partition.communities if isinstance(partition, DomainPartition) else tuple(partition)
    member = {n: i for i, c in enumerate(groups) for n in c}
    missing = set(graph.nodes) - set(member)
    if missing:
        raise ValueError(f"partition does not cover nodes: {sorted(missing)}")
    m = sum(w for _, _, w in graph.undirected_edges)
    if m == 0:
        return 0.0
    internal = [0.0] * len(groups)
    strength = [0.0] * len(groups)
    for a, b, w in sorted(graph.undirected_edges):
        ca, cb = member[a], member[b]
        strength[ca] += w
        strength[cb] += w
        if ca == cb:
            internal[ca] += w
    return sum(internal[c] / m - (strength[c] / (2 * m)) ** 2 for c in range(len(groups)))


class _Level:
    """Weighted graph over super-nodes ``0..n-1`` with self-loop weights."""

    def __init__(self, n: int, adj: list[dict[int, float]], loops: list[float]) -> None:
        self.n = n
        self.adj = adj
        self.loops = loops
        # strength counts a self-loop twice, as in the original graph's degree sum
        self.strength = [sum(adj[i].values()) + 2 * loops[i] for i in range(n)]


def _one_level(level: _Level, m: float) -> tuple[list[int], bool]:
    """Local-move phase. Returns community id per super-node and whether anything moved."""
    n = level.n
    comm = list(range(n))
    tot = list(level.strength)
    two_m2 = 2.0 * m * m
    moved_any = False
    while True:
        improvement = 0.0
        for i in range(n):
            ki = level.strength[i]
            ci = comm[i]
            links: dict[int, float] = {}
            for j, w in level.adj[i].items():
                links[comm[j]] = links.get(comm[j], 0.0) + w
            tot[ci] -= ki
            stay = links.get(ci, 0.0) / m - tot[ci] * ki / two_m2
            best, best_gain = ci, stay
            for c in sorted(links):
                gain = links[c] / m - tot[c] * ki / two_m2
                if gain > best_gain + MIN_GAIN or (abs(gain - best_gain) <= MIN_GAIN and c < best):
                    best, best_gain = c, gain
            tot[best] += ki
            if best != ci:
                comm[i] = best
                moved_any = True
                improvement += best_gain - stay
        if improvement < MIN_GAIN:
            break
    return comm, moved_any


def _aggregate(level: _Level, comm: list[int]) -> tuple[_Level, list[int]]:
    # renumber communities in order of first appearance
    remap: dict[int, int] = {}
    for c in comm:
        if c not in remap:
            remap[c] = len(remap)
    new = [remap[c] for c in comm]
    k = len(remap)
    adj: list[dict[int, float]] = [dict() for _ in range(k)]
    loops = [0.0] * k
    for i in range(level.n):
        ci = new[i]
        loops[ci] += level.loops[i]
        for j, w in level.adj[i].items():
            cj = new[j]
            if ci == cj:
                if i < j:
                    loops[ci] += w
            else:
                adj[ci][cj] = adj[ci].get(cj, 0.0) + w
    return _Level(k, adj, loops), new


def detect_communities(graph: ToolGraph, config: GraphConfig | None = None) -> DomainPartition:
    """Louvain partition of the undirected weighted tool graph.

    Isolated nodes stay singletons. ``config.seed`` is accepted for interface
    symmetry; the fixed visiting order already makes the result reproducible.
    """
    if not graph.nodes:
        raise ValueError("graph has no nodes")
    names = sorted(graph.nodes)
    index = {name: i for i, name in enumerate(names)}
    adj: list[dict[int, float]] = [dict() for _ in names]
    for a, b, w in sorted(graph.undirected_edges):
        ia, ib = index[a], index[b]
        adj[ia][ib] = adj[ia].get(ib, 0.0) + w
        adj[ib][ia] = adj[ib].get(ia, 0.0) + w
    m = sum(w for _, _, w in graph.undirected_edges)
    assignment = list(range(len(names)))
    if m > 0:
        level = _Level(len(names), adj, [0.0] * len(names))
        while True:
            comm, moved = _one_level(level, m)
            if not moved:
                break
            level, new = _aggregate(level, comm)
            assignment = [new[c] for c in assignment]
    groups: dict[int, list[str]] = {}
    for name, c in zip(names, assignment):
        groups.setdefault(c, []).append(name)
    communities = canonical_communities(groups.values())
    return DomainPartition(communities, modularity(graph, communities))
