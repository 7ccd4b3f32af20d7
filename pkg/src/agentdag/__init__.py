"""Pyramid-shaped multi-agent runtime: bounded agent DAGs, capability routing,
recursive decomposition, descriptor messaging, bounded contexts, dual audit and
judge-gated evolution, all behind pluggable executors."""

from __future__ import annotations

from .audit import QualityLedger, SystemAuditReport, ValidationResult, judge, system_audit, update_quality, validate
from .config import RunConfig
from .context import ExecutionContext, HistoryLog, InteractionRecord, append_interaction, build_context, compress, measure
from .graph import AgentGraph, AgentNode, CapabilityDescriptor, Role, functional_capacity, pyramid, validate_graph
from .orchestrator import Orchestrator, RunResult, check_coverage, decompose, execute, merge_results
from .protocol import AgentOutput
from .records import Task, TaskRecord
from .router import RouteResult, exhaustive_route, route
from .workspace import Descriptor, Message, Workspace

__version__ = "0.1.0"

__all__ = [
    "AgentGraph",
    "AgentNode",
    "AgentOutput",
    "CapabilityDescriptor",
    "Descriptor",
    "ExecutionContext",
    "HistoryLog",
    "InteractionRecord",
    "Message",
    "Orchestrator",
    "QualityLedger",
    "Role",
    "RouteResult",
    "RunConfig",
    "RunResult",
    "SystemAuditReport",
    "Task",
    "TaskRecord",
    "ValidationResult",
    "Workspace",
    "append_interaction",
    "build_context",
    "check_coverage",
    "compress",
    "decompose",
    "execute",
    "exhaustive_route",
    "functional_capacity",
    "judge",
    "measure",
    "merge_results",
    "pyramid",
    "route",
    "system_audit",
    "update_quality",
    "validate",
    "validate_graph",
]
