"""Walk the 50-tool fixture catalog from raw JSONL to executable domains.

Run from the repository root:

    python3 demos/catalog_to_domains.py [--tau 0.4]

Prints the similarity graph size, the communities Louvain finds, and for
each materialized domain its tables and how every tool reads or writes them.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from toolenv.catalog import read_catalog
from toolenv.community import detect_communities
from toolenv.graph import GraphConfig, pairwise_edges
from toolenv.materialize import build_domains

CATALOG = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "tools50.jsonl"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--catalog", type=Path, default=CATALOG)
    ap.add_argument("--tau", type=float, default=0.4)
    ap.add_argument("--min-size", type=int, default=2)
    args = ap.parse_args()

    catalog, rejected = read_catalog(args.catalog)
    print(f"catalog: {len(catalog.tools)} tools, {len(rejected)} rejected")

    config = GraphConfig(tau=args.tau)
    graph = pairwise_edges(catalog, config)
    print(f"graph: {len(graph.nodes)} nodes, {len(graph.undirected_edges)} edges above tau={args.tau}")

    partition = detect_communities(graph, config)
    print(f"louvain: {len(partition.communities)} communities, modularity {partition.modularity:.4f}")

    built = build_domains(catalog, graph, partition, min_size=args.min_size)
    for bundle in built.bundles:
        print(f"\n{bundle.domain_id}  tables={bundle.schema.table_names}")
        for impl in bundle.impls:
            kind = impl.effect.kind if impl.effect else "read"
            print(f"  {impl.tool_name:<28} {kind:<7} {impl.target_table}")
    if built.dropped:
        print(f"\ndropped {len(built.dropped)}:")
        for name, reason in built.dropped:
            print(f"  {name}: {reason}")


if __name__ == "__main__":
    main()
