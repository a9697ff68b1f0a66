"""Scenario documents.

A scenario is a JSON document::

    {
      "name": "pipeline",
      "tasks": [{"name": "p1", "function": {"kind": "map_add_constant",
                 "params": {"k": 1}}, "inputs": ["in"], "output": "a"}],
      "sources": [{"stream": "in", "epochs": [[1, 2], [3]]}],
      "failures": [{"step": 2, "task": "p1"}],
      "policy": {"recovery_delay_max": 1, "max_steps": 100, "seed": 0}
    }

Each inner list of ``epochs`` holds the event payloads of one epoch; the
closing border is implied. Payloads are integers, ``"reset"``, ``"unit"``
or integer records such as ``{"sum": 0, "count": 0}``.
"""

from __future__ import annotations

import logging
import dataclasses
from typing import Any, Final, Literal
from pathlib import Path

from aiofiles import open as aopen
from pydantic import (
    Field,
    BaseModel,
    StrictInt,
    ConfigDict,
    NonNegativeInt,
    ValidationError,
)

from .sim import Scenario, ScriptedChoice, ScheduledFailure, validate_scenario
from .model import UNIT, RESET, Value, Record, TaskDef, MessageData
from .functions import FunctionKind, TaskFunction, initial_state
from .exceptions import ScenarioError, ScenarioIssue

logger = logging.getLogger(__name__)

SCENARIO_DIR: Final[Path] = Path(__file__).parent / "scenarios"

PayloadT = StrictInt | Literal["reset", "unit"] | dict[str, StrictInt]


class _Document(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FunctionSpec(_Document):
    kind: FunctionKind
    params: dict[str, StrictInt] = Field(default_factory=dict)


class TaskSpec(_Document):
    name: str = Field(min_length=1)
    function: FunctionSpec
    inputs: list[str]
    output: str
    initial_value: PayloadT | None = None


class SourceSpec(_Document):
    stream: str
    epochs: list[list[PayloadT]] = Field(default_factory=list)


class FailureSpec(_Document):
    step: NonNegativeInt
    task: str


class ScriptEntry(_Document):
    task: str
    # omitted for a border step
    input: str | None = None


class PolicySpec(_Document):
    recovery_delay_max: NonNegativeInt = 1
    max_steps: NonNegativeInt = 100
    seed: NonNegativeInt = 0
    script: list[ScriptEntry] = Field(default_factory=list)


class ScenarioFile(_Document):
    name: str = ""
    tasks: list[TaskSpec] = Field(default_factory=list)
    sources: list[SourceSpec] = Field(default_factory=list)
    failures: list[FailureSpec] = Field(default_factory=list)
    policy: PolicySpec = Field(default_factory=PolicySpec)

    def to_scenario(self) -> Scenario:
        issues: list[ScenarioIssue] = []
        names: dict[str, int] = {}
        for i, task in enumerate(self.tasks):
            if task.name in names:
                issues.append(
                    ScenarioIssue(f"tasks.{i}.name", f"task {task.name!r} repeated")
                )
            names.setdefault(task.name, i)

        tasks: list[TaskDef] = []
        initial_values: list[Value] = []
        for i, task in enumerate(self.tasks):
            function = _function(f"tasks.{i}.function", task.function, issues)
            tasks.append(TaskDef(function, tuple(task.inputs), task.output, task.name))
            initial_values.append(
                initial_state(function)
                if task.initial_value is None
                else _payload(task.initial_value)
            )

        failures: list[ScheduledFailure] = []
        for n, failure in enumerate(self.failures):
            if failure.task not in names:
                issues.append(
                    ScenarioIssue(f"failures.{n}.task", f"no task {failure.task!r}")
                )
                continue
            failures.append(ScheduledFailure(failure.step, names[failure.task]))

        script: list[ScriptedChoice] = []
        for n, entry in enumerate(self.policy.script):
            path = f"policy.script.{n}"
            if entry.task not in names:
                issues.append(ScenarioIssue(f"{path}.task", f"no task {entry.task!r}"))
                continue
            pid = names[entry.task]
            if entry.input is None:
                script.append(ScriptedChoice(pid))
            elif entry.input in self.tasks[pid].inputs:
                index = self.tasks[pid].inputs.index(entry.input)
                script.append(ScriptedChoice(pid, index))
            else:
                issues.append(
                    ScenarioIssue(
                        f"{path}.input",
                        f"{entry.input!r} is not an input of {entry.task!r}",
                    )
                )

        if issues:
            raise ScenarioError(issues)

        scenario = Scenario(
            tasks=tuple(tasks),
            initial_values=tuple(initial_values),
            source_inputs=tuple(
                (source.stream, _messages(source.epochs)) for source in self.sources
            ),
            failure_schedule=tuple(sorted(failures)),
            recovery_delay_max=self.policy.recovery_delay_max,
            max_steps=self.policy.max_steps,
            seed=self.policy.seed,
            script=tuple(script),
            name=self.name,
        )
        if problems := validate_scenario(scenario):
            raise ScenarioError(problems)
        return scenario


def _function(
    path: str, spec: FunctionSpec, issues: list[ScenarioIssue]
) -> TaskFunction:
    parameter = TaskFunction(spec.kind).signature.parameter
    allowed = {parameter} if parameter else set()
    if unexpected := sorted(set(spec.params) - allowed):
        issues.append(
            ScenarioIssue(f"{path}.params", f"unexpected {', '.join(unexpected)}")
        )
    if parameter is None:
        return TaskFunction(spec.kind)
    if parameter not in spec.params:
        issues.append(ScenarioIssue(f"{path}.params", f"{parameter} is required"))
        return TaskFunction(spec.kind)
    return TaskFunction(spec.kind, spec.params[parameter])


def _payload(raw: int | str | dict[str, int]) -> Value:
    match raw:
        case "reset":
            return RESET
        case "unit":
            return UNIT
        case dict():
            return Record.of(**raw)
        case _:
            assert isinstance(raw, int)
            return raw


def _messages(epochs: list[list[Any]]) -> tuple[MessageData, ...]:
    messages: list[MessageData] = []
    for epoch, payloads in enumerate(epochs, start=1):
        messages.extend(MessageData.event(epoch, _payload(p)) for p in payloads)
        messages.append(MessageData.border(epoch))
    return tuple(messages)


def _issue(error: Any) -> ScenarioIssue:
    return ScenarioIssue(".".join(str(part) for part in error["loc"]), error["msg"])


def parse_scenario(text: str | bytes) -> Scenario:
    try:
        document = ScenarioFile.model_validate_json(text)
    except ValidationError as e:
        raise ScenarioError([_issue(error) for error in e.errors()]) from None
    return document.to_scenario()


async def load_scenario(path: Path | str) -> Scenario:
    """Read and validate a scenario document.

    Parameters
    ----------
    path : Path | str
        JSON scenario document

    Returns
    -------
    Scenario
        validated scenario; unnamed documents take the file stem as name

    Raises
    ------
    ScenarioError
        unreadable file, malformed JSON or any violated invariant
    """
    path = Path(path)
    try:
        async with aopen(path, encoding="utf-8") as f:
            text = await f.read()
    except (OSError, UnicodeDecodeError) as e:
        raise ScenarioError(ScenarioIssue(str(path), str(e))) from e

    scenario = parse_scenario(text)
    if not scenario.name:
        scenario = dataclasses.replace(scenario, name=path.stem)
    logger.info(
        "loaded %s: %d tasks, %d sources",
        path,
        len(scenario.tasks),
        len(scenario.source_inputs),
    )
    return scenario


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``pipeline``."""
    path = SCENARIO_DIR / f"{name}.json"
    if not path.is_file():
        known = ", ".join(sorted(p.stem for p in SCENARIO_DIR.glob("*.json")))
        raise ScenarioError(ScenarioIssue(name, f"no bundled scenario ({known})"))
    return path
