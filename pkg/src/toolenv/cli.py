"""Stage-per-subcommand command line: ingest -> graph -> partition -> materialize -> synth -> play -> filter -> export -> eval.

Exit codes: 0 success, 1 usage error, 2 data error. Every stage prints a
one-line JSON summary on stdout.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import yaml

from ._io import DataError, make_header, read_json, read_jsonl, write_json, write_jsonl
from .catalog import catalog_stats, enrich_descriptions, identity_rewriter, io_spec_rewriter, read_catalog, write_catalog
from .client import ChatCompletionsClient, EndpointConfig
from .community import DomainPartition, detect_communities
from .export import EvalRecord, build_eval_report, to_training_sample
from .filtering import FilterConfig, run_funnel
from .graph import GraphConfig, ToolGraph, pairwise_edges
from .interplay import EpisodeLimits, Trajectory, make_replay_agent, make_scripted_user, run_episodes
from .materialize import DomainBundle, build_domains
from .tasks import AgenticTask, WalkConfig, synthesize_tasks

log = logging.getLogger("toolenv")

SUBCOMMANDS = ("ingest", "graph", "partition", "materialize", "synth", "play", "filter", "export", "eval", "pipeline")

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "rewriter": "identity",
    "graph": {"tau": 0.8, "embed_dim": 512},
    "domains": {"min_size": 1, "op_overrides": {}},
    "tasks": {"num_tasks": 100, "rows_per_table": [3, 6]},
    "walk": {"max_steps": 8, "min_steps": 2},
    "episode": {"max_turns": 30, "max_tool_calls": 20, "user_done_token": "###STOP###"},
    "play": {"agent": "replay", "user": "scripted", "chunks": 2, "trials": 1, "parallel": 1},
    "filter": {"ngram_n": 8, "repetition_threshold": 0.5, "exact_match_mode": "all_read_only", "digest_ignore_columns": []},
    "export": {"stage_tag": "stage1_general"},
    "model": {"base_url": None, "model": None, "timeout": 60.0, "max_retries": 3},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _merge(base: dict[str, Any], over: dict[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing input file: {p}")
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise DataError(f"unreadable config {p}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"config {p} must be a mapping")
    return _merge(DEFAULT_CONFIG, doc)


def apply_flags(cfg: dict[str, Any], args: argparse.Namespace) -> dict[str, Any]:
    """Command-line flags win over the config document."""
    cfg = copy.deepcopy(cfg)
    flag_map = {
        "seed": ("seed",),
        "tau": ("graph", "tau"),
        "max_steps": ("walk", "max_steps"),
        "parallel": ("play", "parallel"),
        "exact_match_mode": ("filter", "exact_match_mode"),
        "stage_tag": ("export", "stage_tag"),
        "num_tasks": ("tasks", "num_tasks"),
        "trials": ("play", "trials"),
        "agent": ("play", "agent"),
        "user": ("play", "user"),
        "chunks": ("play", "chunks"),
    }
    for flag, path in flag_map.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        node = cfg
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
    return cfg


def hashed_config(cfg: dict[str, Any]) -> dict[str, Any]:
    """Config without filesystem paths or worker count, which never change the outputs."""
    kept = {k: copy.deepcopy(v) for k, v in cfg.items() if k not in ("catalog", "out")}
    if isinstance(kept.get("play"), dict):
        kept["play"].pop("parallel", None)
    return kept


def header(cfg: dict[str, Any]) -> dict[str, Any]:
    return make_header(hashed_config(cfg), cfg.get("seed"))


def summary(stage: str, **fields: Any) -> None:
    print(json.dumps({"stage": stage, **fields}, sort_keys=True))


def _graph_config(cfg: dict[str, Any]) -> GraphConfig:
    g = cfg["graph"]
    return GraphConfig(float(g["tau"]), int(g["embed_dim"]), int(cfg["seed"]))


def _filter_config(cfg: dict[str, Any]) -> FilterConfig:
    f = cfg["filter"]
    return FilterConfig(int(f["ngram_n"]), float(f["repetition_threshold"]), f["exact_match_mode"], tuple(f["digest_ignore_columns"]))


def _limits(cfg: dict[str, Any]) -> EpisodeLimits:
    e = cfg["episode"]
    return EpisodeLimits(int(e["max_turns"]), int(e["max_tool_calls"]), e["user_done_token"])


# --- stage functions ---------------------------------------------------------


def stage_ingest(cfg: dict[str, Any], src: Path, out: Path) -> dict[str, Any]:
    catalog, rejections = read_catalog(src)
    rewriter = {"identity": identity_rewriter, "io_spec": io_spec_rewriter}.get(cfg["rewriter"])
    if rewriter is None:
        raise UsageError(f"unknown rewriter {cfg['rewriter']!r}")
    catalog, warnings = enrich_descriptions(catalog, rewriter)
    write_catalog(out, catalog, header(cfg))
    if rejections:
        write_jsonl(out.with_suffix(".rejections.jsonl"), [r.to_record() for r in rejections], header(cfg))
    stats = catalog_stats(catalog)
    return {"count": stats.tool_count, "rejected": len(rejections), "warnings": len(warnings)}


def stage_graph(cfg: dict[str, Any], src: Path, out: Path) -> dict[str, Any]:
    catalog, _ = read_catalog(src)
    if not catalog.tools:
        raise DataError(f"{src}: catalog is empty")
    graph = pairwise_edges(catalog, _graph_config(cfg))
    write_json(out, graph.to_record(), header(cfg))
    return {"nodes": len(graph.nodes), "edges": len(graph.undirected_edges)}


def stage_partition(cfg: dict[str, Any], src: Path, out: Path) -> dict[str, Any]:
    graph = ToolGraph.from_record(read_json(src))
    part = detect_communities(graph, _graph_config(cfg))
    write_json(out, part.to_record(), header(cfg))
    return {"communities": len(part.communities), "modularity": part.modularity}


def stage_materialize(cfg: dict[str, Any], catalog_path: Path, graph_path: Path, partition_path: Path, out: Path) -> dict[str, Any]:
    catalog, _ = read_catalog(catalog_path)
    graph = ToolGraph.from_record(read_json(graph_path))
    part = DomainPartition.from_record(read_json(partition_path))
    try:
        built = build_domains(
            catalog, graph, part, cfg["domains"].get("op_overrides") or {}, int(cfg["domains"].get("min_size", 1))
        )
    except KeyError as exc:
        raise DataError(f"partition names unknown tool {exc}") from exc
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob("domain_*.json"):
        old.unlink()
    for bundle in built.bundles:
        write_json(out / f"{bundle.domain_id}.json", bundle.to_record(), header(cfg))
    write_json(out / "refined_graph.json", built.graph.to_record(), header(cfg))
    return {"domains": len(built.bundles), "dropped_tools": len(built.dropped)}


def load_bundles(path: Path) -> dict[str, DomainBundle]:
    if not path.is_dir():
        raise DataError(f"missing input file: {path}")
    bundles = {}
    for f in sorted(path.glob("domain_*.json")):
        b = DomainBundle.from_record(read_json(f))
        bundles[b.domain_id] = b
    if not bundles:
        raise DataError(f"{path}: no domain bundles found")
    return bundles


def stage_synth(cfg: dict[str, Any], bundles_path: Path, out: Path) -> dict[str, Any]:
    bundles = load_bundles(bundles_path)
    tasks = synthesize_tasks(
        list(bundles.values()),
        int(cfg["tasks"]["num_tasks"]),
        int(cfg["seed"]),
        WalkConfig(int(cfg["walk"]["max_steps"]), int(cfg["walk"]["min_steps"])),
        tuple(cfg["tasks"]["rows_per_table"]),
        int(cfg["play"].get("parallel", 1)),
    )
    write_jsonl(out, [t.to_record() for t in tasks], header(cfg))
    return {"tasks": len(tasks), "domains": len({t.domain_id for t in tasks}), "all_read": sum(t.all_read for t in tasks)}


def load_tasks(path: Path, bundles: dict[str, DomainBundle]) -> list[AgenticTask]:
    _, recs = read_jsonl(path)
    out = []
    for r in recs:
        if r.get("domain_id") not in bundles:
            raise DataError(f"{path}: task {r.get('task_id')} refers to unknown domain {r.get('domain_id')}")
        out.append(AgenticTask.from_record(r, bundles[r["domain_id"]]))
    return out


def _client_factory(kind: str, role: str, cfg: dict[str, Any], limits: EpisodeLimits):
    if kind == "replay" and role == "agent":
        return make_replay_agent
    if kind == "scripted" and role == "user":
        chunks = int(cfg["play"]["chunks"])
        return lambda task: make_scripted_user(task, chunks, limits)
    if kind == "http":
        m = cfg["model"]
        endpoint = EndpointConfig.from_env(
            base_url=m.get("base_url"), model=m.get("model"), timeout=m.get("timeout"), max_retries=m.get("max_retries")
        )
        return lambda task: ChatCompletionsClient(endpoint)
    raise UsageError(f"unsupported {role} client {kind!r}")


def stage_play(cfg: dict[str, Any], tasks_path: Path, bundles_path: Path, out: Path) -> dict[str, Any]:
    bundles = load_bundles(bundles_path)
    tasks = load_tasks(tasks_path, bundles)
    limits = _limits(cfg)
    play = cfg["play"]
    agent = _client_factory(play["agent"], "agent", cfg, limits)
    user = _client_factory(play["user"], "user", cfg, limits)
    jobs = [(t, bundles[t.domain_id], trial) for t in tasks for trial in range(int(play["trials"]))]
    trajs = run_episodes(jobs, agent, user, limits, int(play["parallel"]))
    write_jsonl(out, [t.to_record() for t in trajs], header(cfg))
    reasons: dict[str, int] = {}
    for t in trajs:
        reasons[t.terminal_reason] = reasons.get(t.terminal_reason, 0) + 1
    return {"trajectories": len(trajs), "terminal_reasons": reasons}


def load_trajectories(path: Path) -> list[Trajectory]:
    _, recs = read_jsonl(path)
    return [Trajectory.from_record(r) for r in recs]


def stage_filter(cfg: dict[str, Any], traj_path: Path, tasks_path: Path, bundles_path: Path, out: Path) -> dict[str, Any]:
    bundles = load_bundles(bundles_path)
    tasks = {t.task_id: t for t in load_tasks(tasks_path, bundles)}
    fcfg = _filter_config(cfg)
    records = []
    for traj in load_trajectories(traj_path):
        task = tasks.get(traj.task_id)
        if task is None:
            raise DataError(f"{traj_path}: trajectory for unknown task {traj.task_id}")
        res = run_funnel(traj, task, bundles[task.domain_id], fcfg)
        records.append({**res.to_record(traj.task_id), "trial": traj.trial})
    write_jsonl(out, records, header(cfg))
    return {"trajectories": len(records), "kept": sum(r["kept"] for r in records)}


def _kept_keys(funnel_path: Path) -> dict[tuple[str, int], bool]:
    _, recs = read_jsonl(funnel_path)
    return {(r["task_id"], int(r.get("trial", 0))): bool(r["kept"]) for r in recs}


def stage_export(cfg: dict[str, Any], traj_path: Path, funnel_path: Path, out: Path) -> dict[str, Any]:
    kept = _kept_keys(funnel_path)
    stage_tag = cfg["export"]["stage_tag"]
    samples = []
    for traj in load_trajectories(traj_path):
        if kept.get((traj.task_id, traj.trial)):
            samples.append(to_training_sample(traj, stage_tag).to_record())
    write_jsonl(out, samples, header(cfg))
    return {"samples": len(samples), "stage_tag": stage_tag}


def stage_eval(cfg: dict[str, Any], traj_path: Path, funnel_path: Path, out: Path) -> dict[str, Any]:
    kept = _kept_keys(funnel_path)
    by_task: dict[str, list[Trajectory]] = {}
    for traj in load_trajectories(traj_path):
        by_task.setdefault(traj.task_id, []).append(traj)
    records = []
    for task_id in sorted(by_task):
        trials = sorted(by_task[task_id], key=lambda t: t.trial)
        records.append(
            EvalRecord.from_trials(
                task_id, [kept.get((task_id, t.trial), False) for t in trials], [t.tool_call_count for t in trials]
            )
        )
    report = build_eval_report(records)
    write_json(out, report.to_record(), header(cfg))
    return {"tasks": len(records), "pass_1": report.pass_k.get(1)}


def stage_pipeline(cfg: dict[str, Any], catalog: Path, out: Path) -> dict[str, Any]:
    out.mkdir(parents=True, exist_ok=True)
    steps = [
        ("ingest", lambda: stage_ingest(cfg, catalog, out / "catalog.jsonl")),
        ("graph", lambda: stage_graph(cfg, out / "catalog.jsonl", out / "graph.json")),
        ("partition", lambda: stage_partition(cfg, out / "graph.json", out / "partition.json")),
        ("materialize", lambda: stage_materialize(cfg, out / "catalog.jsonl", out / "graph.json", out / "partition.json", out / "bundles")),
        ("synth", lambda: stage_synth(cfg, out / "bundles", out / "tasks.jsonl")),
        ("play", lambda: stage_play(cfg, out / "tasks.jsonl", out / "bundles", out / "trajectories.jsonl")),
        ("filter", lambda: stage_filter(cfg, out / "trajectories.jsonl", out / "tasks.jsonl", out / "bundles", out / "funnel.jsonl")),
        ("export", lambda: stage_export(cfg, out / "trajectories.jsonl", out / "funnel.jsonl", out / "export.jsonl")),
        ("eval", lambda: stage_eval(cfg, out / "trajectories.jsonl", out / "funnel.jsonl", out / "eval.json")),
    ]
    results = {}
    for name, fn in steps:
        results[name] = fn()
        log.info("%s: %s", name, results[name])
    return {k: v for k, v in results.items() if k in ("ingest", "synth", "filter", "export")}


# --- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="toolenv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name: str, help: str, inputs: Sequence[str] = ("--in",)) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        for flag in inputs:
            dest = "in_" if flag == "--in" else flag.lstrip("-").replace("-", "_")
            p.add_argument(flag, dest=dest, required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        return p

    p = add("ingest", "validate and deduplicate a raw JSONL tool catalog")
    p.add_argument("--rewriter", choices=("identity", "io_spec"))
    p = add("graph", "build the parameter-similarity tool graph")
    p.add_argument("--tau", type=float)
    add("partition", "Louvain communities over the tool graph")
    add("materialize", "derive schemas and tool impls per domain", ("--catalog", "--graph", "--partition"))
    p = add("synth", "synthesize verifiable tasks", ("--bundles",))
    p.add_argument("--num-tasks", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--parallel", type=int)
    p = add("play", "run simulated user-agent episodes", ("--tasks", "--bundles"))
    p.add_argument("--agent", choices=("replay", "http"))
    p.add_argument("--user", choices=("scripted", "http"))
    p.add_argument("--chunks", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--parallel", type=int)
    p = add("filter", "three-stage trajectory funnel", ("--in", "--tasks", "--bundles"))
    p.add_argument("--exact-match-mode", choices=("all_read_only", "always"))
    p = add("export", "loss-mask labelled training export", ("--in", "--funnel"))
    p.add_argument("--stage-tag", choices=("stage1_general", "stage2_domain"))
    add("eval", "pass^k and accuracy-by-depth report", ("--in", "--funnel"))
    p = sub.add_parser("pipeline", help="run every stage into one output directory")
    p.add_argument("--config")
    p.add_argument("--in", dest="in_", help="raw catalog (overrides the config's 'catalog')")
    p.add_argument("--out", help="output directory (overrides the config's 'out')")
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--num-tasks", type=int)
    p.add_argument("--parallel", type=int)
    p.add_argument("--exact-match-mode", choices=("all_read_only", "always"))
    p.add_argument("--stage-tag", choices=("stage1_general", "stage2_domain"))
    return parser


def _dispatch(args: argparse.Namespace) -> dict[str, Any]:
    cfg = apply_flags(load_config(args.config), args)
    if getattr(args, "rewriter", None):
        cfg["rewriter"] = args.rewriter
    cmd = args.command
    out = Path(args.out) if getattr(args, "out", None) else None
    if cmd == "ingest":
        return stage_ingest(cfg, Path(args.in_), out)
    if cmd == "graph":
        return stage_graph(cfg, Path(args.in_), out)
    if cmd == "partition":
        return stage_partition(cfg, Path(args.in_), out)
    if cmd == "materialize":
        return stage_materialize(cfg, Path(args.catalog), Path(args.graph), Path(args.partition), out)
    if cmd == "synth":
        return stage_synth(cfg, Path(args.bundles), out)
    if cmd == "play":
        return stage_play(cfg, Path(args.tasks), Path(args.bundles), out)
    if cmd == "filter":
        return stage_filter(cfg, Path(args.in_), Path(args.tasks), Path(args.bundles), out)
    if cmd == "export":
        return stage_export(cfg, Path(args.in_), Path(args.funnel), out)
    if cmd == "eval":
        return stage_eval(cfg, Path(args.in_), Path(args.funnel), out)
    if cmd == "pipeline":
        catalog = args.in_ or cfg.get("catalog")
        out_dir = args.out or cfg.get("out")
        if not catalog or not out_dir:
            raise UsageError("pipeline needs a catalog and an output directory (flags or config)")
        if args.config and not Path(catalog).is_absolute() and not args.in_:
            catalog = str(Path(args.config).parent / catalog)
        return stage_pipeline(cfg, Path(catalog), Path(out_dir))
    raise UsageError(f"unknown command {cmd!r}")


def cli_dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        result = _dispatch(args)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"toolenv: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"toolenv: data error: {exc}", file=sys.stderr)
        return 2
    summary(args.command, **result)
    return 0


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
