"""Mobile-agent middleware and deterministic simulator for federated B2B retrieval."""

from .agent import (
    AgentCapsule,
    Collected,
    HopEntry,
    Itinerary,
    SearchGoal,
    TraceGoal,
    decode_capsule,
    encode_capsule,
    execute_at,
    local_filter,
    new_agent,
)
from .firmstore import (
    FirmStore,
    QueryCriteria,
    Scenario,
    ScenarioInvalid,
    apply_scope,
    custody_lookup,
    ingest_scenario,
    load_scenario,
    query_products,
)
from .harness import (
    BaselineResult,
    CompletionLog,
    OracleResult,
    TrafficReport,
    baseline_fetch,
    centralized_oracle,
    result_set,
    run_comparison,
    run_intermittency,
    scope_violations,
)
from .interface import Report, SearchRequest, TraceRequest, aggregate, render, run_query, submit_query
from .model import (
    AccessScope,
    CustodyEvent,
    PlatformConfig,
    ProductRecord,
    TrustLevel,
    build_custody_chain,
    canonical_decode,
    canonical_encode,
)
from .planner import CostGraph, Route, plan_route, resolve_targets, route_cost
from .platform import Platform, admit, assign_scope
from .runtime import Runtime

__version__ = "0.1.0"
