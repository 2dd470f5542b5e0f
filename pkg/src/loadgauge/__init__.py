"""loadgauge: scenario-driven load generation and measurement for inference SUTs."""

from .core import (
    LatencyRecord,
    ModeKind,
    Query,
    RunResult,
    SampleResponse,
    ScenarioKind,
    TestSettings,
    ValidationError,
    settings_digest,
)
from .planner import QueryPlan, norm_inv, plan_for_scenario, required_query_count
from .schedule import QueryTrace, SamplingMode, build_trace, draw_sample_indices, gen_arrivals
from .engine import NullSut, RawRun, SutContract, SutContext, run
from .metrics import (
    aggregate_server_runs,
    evaluate_records,
    evaluate_run,
    percentile,
    run_server_protocol,
    search_max_qps,
    search_max_streams,
)
from .compliance import (
    ComplianceConfig,
    ComplianceVerdict,
    accuracy_spot_check,
    caching_probe,
    run_accuracy_reference,
    seed_variants,
)
from .logio import check_submission, replay_run_log, write_bundle, write_run_log
from . import simsut

__version__ = "0.1.0"

__all__ = [
    "LatencyRecord", "ModeKind", "Query", "RunResult", "SampleResponse",
    "ScenarioKind", "TestSettings", "ValidationError", "settings_digest",
    "QueryPlan", "norm_inv", "plan_for_scenario", "required_query_count",
    "QueryTrace", "SamplingMode", "build_trace", "draw_sample_indices", "gen_arrivals",
    "NullSut", "RawRun", "SutContract", "SutContext", "run",
    "aggregate_server_runs", "evaluate_records", "evaluate_run", "percentile",
    "run_server_protocol", "search_max_qps", "search_max_streams",
    "ComplianceConfig", "ComplianceVerdict", "accuracy_spot_check",
    "caching_probe", "run_accuracy_reference", "seed_variants",
    "check_submission", "replay_run_log", "write_bundle", "write_run_log",
    "simsut",
]
