"""Scenario benchmarks for AI-infused services: distill an application DAG,
drive it with open or closed workloads (simulated or live), and analyze latency.
"""

from .analysis import (
    LatencySummary, TradeoffPoint, ai_split, build_report, deviation, percentile,
    reproducibility_cv, summarize, training_tradeoff,
)
from .distill import DistillConfig, DistillReport, distill
from .queueing import MM1Params, NetworkParams, gap_report, mm1_mean, mm1_percentile, network_mean
from .scenario import (
    ComponentNode, Edge, ScenarioGraph, ServiceDistribution, load_scenario, parse_scenario,
    serialize_scenario, shipped_scenario, validate_graph,
)
from .sim import simulate
from .traces import RequestTrace, StageRecord, ingest_stage_log, load_run, write_traces
from .workload import WorkloadProfile, generate_open

__version__ = "0.1.0"

__all__ = [
    "ComponentNode", "DistillConfig", "DistillReport", "Edge", "LatencySummary", "MM1Params",
    "NetworkParams", "RequestTrace", "ScenarioGraph", "ServiceDistribution", "StageRecord",
    "TradeoffPoint", "WorkloadProfile", "ai_split", "build_report", "deviation", "distill",
    "gap_report", "generate_open", "ingest_stage_log", "load_run", "load_scenario", "mm1_mean",
    "mm1_percentile", "network_mean", "parse_scenario", "percentile", "reproducibility_cv",
    "serialize_scenario", "shipped_scenario", "simulate", "summarize", "training_tradeoff",
    "validate_graph", "write_traces",
]
