"""Build simulated tool-calling environments from a tool catalog and synthesize verifiable trajectories."""

__version__ = "0.1.0"

from .catalog import (
    CatalogStats,
    ParameterSpec,
    RejectionReport,
    ReturnField,
    ToolCatalog,
    ToolSpec,
    catalog_stats,
    enrich_descriptions,
    identity_rewriter,
    ingest_catalog,
    io_spec_rewriter,
    read_catalog,
)
from .community import DomainPartition, detect_communities, modularity
from .graph import GraphConfig, ToolGraph, embed_parameters, heuristic_judge, pairwise_edges, refine_edges
from .materialize import (
    DatabaseSchema,
    DomainBundle,
    ImpossibleBinding,
    ToolImpl,
    build_bundle,
    build_domains,
    classify_op,
    derive_schema,
    materialize_tool,
    validate_bundle,
)
from .runtime import EnvironmentState, StateDiff, ToolCall, ToolResult, apply_diff, diff, digest, execute, init_state
from .tasks import (
    AgenticTask,
    GoldenAction,
    WalkConfig,
    build_task,
    compose_intent,
    generate_arguments,
    sample_walk,
    synthesize_tasks,
)
from .client import ChatCompletionsClient, EndpointConfig, Message, ModelClientError
from .interplay import EpisodeLimits, Trajectory, make_replay_agent, make_scripted_user, run_episode
from .filtering import FilterConfig, FunnelResult, run_funnel
from .export import EvalRecord, TrainingSample, accuracy_by_depth, build_eval_report, pass_hat_k, to_training_sample
