from __future__ import annotations

from typing import TYPE_CHECKING, NamedTuple

if TYPE_CHECKING:
    from .semantics import StepChoice


class AbsflowError(Exception):
    """Base class of every error raised by absflow."""


class ScenarioIssue(NamedTuple):
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path or '<root>'}: {self.message}"


class ScenarioError(AbsflowError, ValueError):
    """A scenario document or a Scenario value violates its invariants.

    Every violated invariant is reported as a ScenarioIssue with a dotted
    path into the document, e.g. ``tasks.0.inputs.1``.
    """

    def __init__(self, issues: list[ScenarioIssue] | ScenarioIssue) -> None:
        if isinstance(issues, ScenarioIssue):
            issues = [issues]
        self.issues: list[ScenarioIssue] = issues
        super().__init__("; ".join(str(issue) for issue in issues))


class TaskTypeError(ScenarioError):
    """Task function applied to a state or input it does not accept."""

    def __init__(self, message: str, path: str = "") -> None:
        super().__init__(ScenarioIssue(path, message))


class ConfigurationError(AbsflowError, ValueError):
    """Configuration outside the domain of a core-model operation."""


class StepNotEnabledError(AbsflowError):
    def __init__(self, choice: StepChoice, reason: str = "") -> None:
        self.choice = choice
        message = f"step {choice!r} is not enabled"
        if reason:
            message = f"{message}: {reason}"
        super().__init__(message)


class StateSpaceExceededError(AbsflowError):
    def __init__(self, limit: int) -> None:
        self.limit = limit
        super().__init__(
            f"state space exceeds {limit} nodes (raise ABSFLOW_STATE_LIMIT)"
        )


class InvariantViolationError(AbsflowError):
    """An execution broke an engine invariant; this is an internal bug."""


class InvalidTraceError(AbsflowError):
    def __init__(self, index: int, reason: str) -> None:
        self.index = index
        self.reason = reason
        super().__init__(f"trace is not valid at step {index}: {reason}")
