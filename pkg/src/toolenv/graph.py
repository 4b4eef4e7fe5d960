"""Parameter-similarity tool graph and pairwise dependency refinement."""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Protocol, Sequence

import numpy as np

from .catalog import ToolCatalog, ToolSpec

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.8
DEFAULT_EMBED_DIM = 512

# Feature weights for the lexical embedding. Whole parameter names dominate,
# sub-tokens and types add partial overlap, and description trigrams share a
# fixed unit of mass per parameter so long descriptions do not swamp names.
NAME_WEIGHT = 2.0
TOKEN_WEIGHT = 1.0
TYPE_WEIGHT = 0.5
TRIGRAM_MASS = 1.0


@dataclass(frozen=True)
class GraphConfig:
    tau: float = DEFAULT_TAU
    embed_dim: int = DEFAULT_EMBED_DIM
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.embed_dim <= 0:
            raise ValueError("embed_dim must be positive")

    def to_record(self) -> dict[str, Any]:
        return {"tau": self.tau, "embed_dim": self.embed_dim, "seed": self.seed}


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dim: int
    normalized: bool = True

    def __post_init__(self) -> None:
        if len(self.values) != self.dim:
            raise ValueError("length of values must equal dim")

    @property
    def is_zero(self) -> bool:
        return not any(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


class EmbeddingProvider(Protocol):
    """External text embedder; must return a fixed-length real vector."""

    def __call__(self, text: str) -> Sequence[float]: ...


def _bucket(feature: str, dim: int) -> int:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def _name_tokens(name: str) -> list[str]:
    spaced = re.sub(r"([a-z0-9])([A-Z])", r"\1_\2", name)
    return [t for t in re.split(r"[^A-Za-z0-9]+", spaced.lower()) if t]


def _trigrams(text: str) -> list[str]:
    text = " ".join(text.lower().split())
    return [text[i : i + 3] for i in range(len(text) - 2)]


def parameter_features(tool: ToolSpec) -> dict[str, float]:
    """Weighted lexical features of a tool's parameter list (order-free)."""
    feats: dict[str, float] = {}

    def add(key: str, w: float) -> None:
        feats[key] = feats.get(key, 0.0) + w

    for p in tool.parameters:
        add(f"name:{p.name.lower()}", NAME_WEIGHT)
        for tok in _name_tokens(p.name):
            add(f"tok:{tok}", TOKEN_WEIGHT)
        add(f"type:{p.ptype}", TYPE_WEIGHT)
        tris = _trigrams(p.description)
        for tri in tris:
            add(f"tri:{tri}", TRIGRAM_MASS / len(tris))
    return feats


def parameter_text(tool: ToolSpec) -> str:
    return "; ".join(f"{p.name} ({p.ptype}): {p.description}" for p in tool.parameters)


def embed_parameters(
    tool: ToolSpec,
    config: GraphConfig,
    provider: EmbeddingProvider | None = None,
) -> EmbeddingVector:
    """Embed a tool's parameter list as a unit vector.

    The default is feature hashing of ``parameter_features`` into
    ``config.embed_dim`` buckets. A tool without parameters maps to the zero
    vector, reported with ``normalized=False``.
    """
    if not tool.parameters:
        return EmbeddingVector((0.0,) * config.embed_dim, config.embed_dim, normalized=False)
    if provider is not None:
        vec = np.asarray(provider(parameter_text(tool)), dtype=np.float64)
        if vec.shape != (config.embed_dim,):
            raise ValueError(f"provider returned shape {vec.shape}, expected ({config.embed_dim},)")
    else:
        vec = np.zeros(config.embed_dim)
        # sorted so float accumulation order is fixed
        for key, w in sorted(parameter_features(tool).items()):
            vec[_bucket(key, config.embed_dim)] += w
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return EmbeddingVector(tuple(vec.tolist()), config.embed_dim, normalized=False)
    return EmbeddingVector(tuple((vec / norm).tolist()), config.embed_dim)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.is_zero or b.is_zero:
        return 0.0
    return float(np.dot(a.as_array(), b.as_array()))


@dataclass(frozen=True)
class ToolGraph:
    nodes: tuple[str, ...]
    undirected_edges: frozenset[tuple[str, str, float]] = frozenset()
    directed_edges: frozenset[tuple[str, str]] = frozenset()
    config: GraphConfig = field(default_factory=GraphConfig)

    def __post_init__(self) -> None:
        nodes = set(self.nodes)
        for a, b, w in self.undirected_edges:
            if a == b:
                raise ValueError(f"self-loop on {a}")
            if a not in nodes or b not in nodes:
                raise ValueError(f"edge endpoint not a node: {a}-{b}")
        for a, b in self.directed_edges:
            if a == b or a not in nodes or b not in nodes:
                raise ValueError(f"bad directed edge {a}->{b}")

    def edge_dict(self) -> dict[frozenset[str], float]:
        return {frozenset((a, b)): w for a, b, w in self.undirected_edges}

    def neighbors(self, node: str) -> dict[str, float]:
        out = {}
        for a, b, w in self.undirected_edges:
            if a == node:
                out[b] = w
            elif b == node:
                out[a] = w
        return out

    def to_record(self) -> dict[str, Any]:
        return {
            "nodes": list(self.nodes),
            "undirected_edges": [{"a": a, "b": b, "w": w} for a, b, w in sorted(self.undirected_edges)],
            "directed_edges": [{"from": a, "to": b} for a, b in sorted(self.directed_edges)],
            "config": self.config.to_record(),
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "ToolGraph":
        cfg = rec.get("config") or {}
        return cls(
            nodes=tuple(rec["nodes"]),
            undirected_edges=frozenset((e["a"], e["b"], float(e["w"])) for e in rec.get("undirected_edges", [])),
            directed_edges=frozenset((e["from"], e["to"]) for e in rec.get("directed_edges", [])),
            config=GraphConfig(**cfg),
        )


def embedding_matrix(
    tools: Sequence[ToolSpec], config: GraphConfig, provider: EmbeddingProvider | None = None
) -> np.ndarray:
    if not tools:
        return np.zeros((0, config.embed_dim))
    return np.vstack([embed_parameters(t, config, provider).as_array() for t in tools])


def pairwise_edges(
    catalog: ToolCatalog | Iterable[ToolSpec],
    config: GraphConfig = GraphConfig(),
    provider: EmbeddingProvider | None = None,
) -> ToolGraph:
    """Connect every pair of tools whose parameter embeddings have cosine > tau.

    Tools are processed in name order so the result does not depend on the
    catalog order. Rows are unit vectors (or zero), so the Gram matrix is the
    cosine matrix, with zero rows giving similarity 0.
    """
    tools = sorted(catalog, key=lambda t: t.name)
    if not tools:
        raise ValueError("catalog must be non-empty")
    names = [t.name for t in tools]
    emb = embedding_matrix(tools, config, provider)
    sim = emb @ emb.T
    iu, ju = np.nonzero(np.triu(sim > config.tau, k=1))
    edges = frozenset((names[i], names[j], float(sim[i, j])) for i, j in zip(iu.tolist(), ju.tolist()))
    return ToolGraph(tuple(names), edges, frozenset(), config)


# --- dependency refinement ---------------------------------------------------

DEPENDENCY_ANSWERS = ("a->b", "b->a", "both", "none")


class DependencyJudge(Protocol):
    def __call__(self, a: ToolSpec, b: ToolSpec) -> str: ...


def heuristic_judge(a: ToolSpec, b: ToolSpec) -> str:
    """``a->b`` when a returned field of ``a`` feeds a required parameter of ``b``."""

    def feeds(x: ToolSpec, y: ToolSpec) -> bool:
        if not x.returns:
            return False
        outs = {r.name for r in x.returns}
        return any(name in outs for name in y.required_names)

    ab, ba = feeds(a, b), feeds(b, a)
    if ab and ba:
        return "both"
    if ab:
        return "a->b"
    if ba:
        return "b->a"
    return "none"


def refine_edges(
    community_tools: Sequence[ToolSpec],
    graph: ToolGraph,
    judge: Callable[[ToolSpec, ToolSpec], str] = heuristic_judge,
) -> tuple[ToolGraph, list[str]]:
    """Ask ``judge`` about every unordered pair in one community.

    Pairs are visited in name order with ``a < b``. Directed edges are added
    to whatever the graph already holds; undirected edges are left alone.
    Judge errors or unknown answers skip the pair with a warning.
    """
    nodes = set(graph.nodes)
    tools = sorted(community_tools, key=lambda t: t.name)
    missing = [t.name for t in tools if t.name not in nodes]
    if missing:
        raise ValueError(f"tools not in graph: {missing}")
    directed = set(graph.directed_edges)
    warnings: list[str] = []
    for i, a in enumerate(tools):
        for b in tools[i + 1 :]:
            try:
                answer = judge(a, b)
            except Exception as exc:  # noqa: BLE001 - judge failures are per-pair
                warnings.append(f"judge failed on ({a.name}, {b.name}): {exc}")
                continue
            if answer not in DEPENDENCY_ANSWERS:
                warnings.append(f"judge gave unknown answer {answer!r} on ({a.name}, {b.name})")
                continue
            if answer in ("a->b", "both"):
                directed.add((a.name, b.name))
            if answer in ("b->a", "both"):
                directed.add((b.name, a.name))
    for w in warnings:
        log.warning(w)
    return replace(graph, directed_edges=frozenset(directed)), warnings

