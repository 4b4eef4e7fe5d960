"""Independent reference computations used only by the tests.

Each oracle is written from the definition, in plain Python, without calling
the package code it checks.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import re
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

# --- parameter-similarity graph ---------------------------------------------


def _bucket(feature: str, dim: int) -> int:
    h = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little") % dim


def _tokens(name: str) -> list[str]:
    spaced = re.sub(r"([a-z0-9])([A-Z])", r"\1_\2", name)
    return [t for t in re.split(r"[^A-Za-z0-9]+", spaced.lower()) if t]


def hashed_embedding(params: Sequence[dict], dim: int) -> dict[int, float]:
    """Sparse unit vector of a raw parameter list, built straight from the feature recipe.

    Features: ``name:`` with weight 2, each name token with weight 1, the type
    with weight 0.5, and one unit of mass spread over the description's
    character trigrams.
    """
    feats: dict[str, float] = {}
    for p in params:
        feats[f"name:{p['name'].lower()}"] = feats.get(f"name:{p['name'].lower()}", 0.0) + 2.0
        for tok in _tokens(p["name"]):
            feats[f"tok:{tok}"] = feats.get(f"tok:{tok}", 0.0) + 1.0
        feats[f"type:{p['type']}"] = feats.get(f"type:{p['type']}", 0.0) + 0.5
        text = " ".join(p.get("description", "").lower().split())
        tris = [text[i : i + 3] for i in range(len(text) - 2)]
        for tri in tris:
            feats[f"tri:{tri}"] = feats.get(f"tri:{tri}", 0.0) + 1.0 / len(tris)
    vec: dict[int, float] = {}
    for key in sorted(feats):
        b = _bucket(key, dim)
        vec[b] = vec.get(b, 0.0) + feats[key]
    norm = math.sqrt(sum(v * v for v in vec.values()))
    return {k: v / norm for k, v in vec.items()} if norm else {}


def brute_force_edges(records: Sequence[dict], tau: float, dim: int) -> dict[frozenset[str], float]:
    """O(N^2) double loop: every unordered pair with cosine strictly above ``tau``."""
    embs = {r["name"]: hashed_embedding(r["parameters"], dim) for r in records}
    names = sorted(embs)
    edges: dict[frozenset[str], float] = {}
    for i in range(len(names)):
        for j in range(len(names)):
            if i == j:
                continue
            a, b = embs[names[i]], embs[names[j]]
            cos = sum(v * b.get(k, 0.0) for k, v in a.items()) if a and b else 0.0
            if cos > tau:
                edges[frozenset((names[i], names[j]))] = cos
    return edges


# --- modularity -------------------------------------------------------------


def set_partitions(items: Sequence[str]) -> Iterator[list[list[str]]]:
    """Every partition of ``items`` into non-empty blocks (Bell-number many)."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for k in range(len(part)):
            yield part[:k] + [[first, *part[k]]] + part[k + 1 :]
        yield [[first], *part]


def modularity_from_definition(edges: Iterable[tuple[str, str, float]], blocks: Sequence[Sequence[str]]) -> float:
    """Q = (1 / 2m) * sum_ij [A_ij - k_i k_j / 2m] * delta(c_i, c_j), summed over node pairs."""
    adj: dict[tuple[str, str], float] = {}
    strength: dict[str, float] = {}
    for a, b, w in edges:
        adj[(a, b)] = adj.get((a, b), 0.0) + w
        adj[(b, a)] = adj.get((b, a), 0.0) + w
        strength[a] = strength.get(a, 0.0) + w
        strength[b] = strength.get(b, 0.0) + w
    two_m = sum(strength.values())
    if two_m == 0:
        return 0.0
    q = 0.0
    for block in blocks:
        for i in block:
            for j in block:
                q += adj.get((i, j), 0.0) - strength.get(i, 0.0) * strength.get(j, 0.0) / two_m
    return q / two_m


# --- evaluation -------------------------------------------------------------


def pass_k_by_enumeration(n: int, c: int, k: int) -> Fraction:
    """Share of k-subsets of n trials (c of them successes) that contain only successes."""
    trials = [True] * c + [False] * (n - c)
    subsets = list(itertools.combinations(range(n), k))
    hits = sum(1 for s in subsets if all(trials[i] for i in s))
    return Fraction(hits, len(subsets))


def ols_line(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Closed-form simple linear regression (slope, intercept)."""
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    slope = sxy / sxx
    return slope, my - slope * mx
