"""Executor backends, scenarios, metrics, simulation and the command line."""

from __future__ import annotations

from .executors import Executor, MockExecutor, ScriptedExecutor, mock_invoke
from .scenario import FAULT_SIGNATURES, FAULTS, Scenario, ScenarioEntry

__all__ = [
    "FAULTS",
    "FAULT_SIGNATURES",
    "Executor",
    "MockExecutor",
    "Scenario",
    "ScenarioEntry",
    "ScriptedExecutor",
    "mock_invoke",
]
