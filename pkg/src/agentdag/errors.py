"""Exception hierarchy shared by every agentdag module."""

from __future__ import annotations


class AgentDagError(Exception):
    """Base class for all library errors."""


# -- graph ---------------------------------------------------------------


class GraphError(AgentDagError):
    pass


class DuplicateId(GraphError):
    pass


class UnknownId(GraphError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class InvalidRole(GraphError):
    pass


class FanOutExceeded(GraphError):
    pass


class CycleDetected(GraphError):
    pass


class WouldViolateInvariant(GraphError):
    """A topology transformation produced an invalid graph and was rolled back."""


# -- routing -------------------------------------------------------------


class NoCandidate(AgentDagError):
    pass


class RoutingFailure(AgentDagError):
    pass


# -- workspace -----------------------------------------------------------


class WorkspaceError(AgentDagError):
    pass


class AddressEscape(WorkspaceError):
    pass


class DescriptorTooLong(WorkspaceError):
    pass


class StorageFailure(WorkspaceError):
    pass


class NotFound(WorkspaceError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class DanglingAddress(WorkspaceError):
    pass


class UnknownRecipient(WorkspaceError):
    pass


class VerifyOnlyViolation(WorkspaceError):
    """A verify-only participant (the judge) attempted to mutate the workspace."""


class ToolNotPermitted(AgentDagError):
    pass


# -- context -------------------------------------------------------------


class BudgetImpossible(AgentDagError):
    pass


# -- execution -----------------------------------------------------------


class ExecutorFailure(AgentDagError):
    pass


class ExecutorTimeout(ExecutorFailure):
    pass


class ContractViolation(AgentDagError):
    """Output did not honour the strict JSON output contract."""

    def __init__(self, message: str, raw: str | None = None) -> None:
        super().__init__(message)
        self.raw = raw


class DepthExceeded(AgentDagError):
    pass


class EmptyDecomposition(AgentDagError):
    pass


class AuditRejected(AgentDagError):
    pass


class Timeout(AgentDagError):
    pass


class JudgeUnavailable(AgentDagError):
    pass


class OutOfRange(AgentDagError, ValueError):
    pass


# -- harness -------------------------------------------------------------


class UnmatchedRequest(AgentDagError):
    pass


class ScenarioError(AgentDagError):
    pass


class AuthMissing(ExecutorFailure):
    pass


class Transport(ExecutorFailure):
    pass


class NoBackends(AgentDagError):
    pass


class ConfigError(AgentDagError, ValueError):
    pass
