"""Scenario-driven executions: seeded, scripted, fair and starving schedulers,
failure injection, liveness checking and the exhaustive small-state explorer."""

from __future__ import annotations

import os
import random
import logging
import dataclasses
from typing import Final, Protocol, NamedTuple
from dataclasses import dataclass
from collections import deque, defaultdict
from collections.abc import Sequence

from .model import (
    Event,
    Value,
    Archive,
    Cursors,
    Message,
    TaskDef,
    StreamName,
    MessageData,
    ProcessorId,
    Configuration,
    ProcessorState,
    Normal,
    out,
)
from .trace import Trace, TraceStep
from .functions import (
    ValueKind,
    FunctionKind,
    TaskFunction,
    kind_of,
    check_state,
    output_kinds,
    initial_state,
)
from .semantics import (
    RECOVER,
    FailChoice,
    StepChoice,
    EventChoice,
    BorderChoice,
    RecoverChoice,
    derive,
    is_quiescent,
    enabled_steps,
)
from .exceptions import (
    ScenarioError,
    ScenarioIssue,
    TaskTypeError,
    StateSpaceExceededError,
)

logger = logging.getLogger(__name__)

DEFAULT_STATE_LIMIT: Final[int] = 200_000
STATE_LIMIT_ENV: Final[str] = "ABSFLOW_STATE_LIMIT"


class ScheduledFailure(NamedTuple):
    step_index: int
    processor: ProcessorId


class ScriptedChoice(NamedTuple):
    processor: ProcessorId
    # None selects the border step
    input_index: int | None = None

    def as_choice(self) -> StepChoice:
        if self.input_index is None:
            return BorderChoice(self.processor)
        return EventChoice(self.processor, self.input_index)


@dataclass(frozen=True)
class Scenario:
    tasks: tuple[TaskDef, ...]
    initial_values: tuple[Value, ...]
    source_inputs: tuple[tuple[StreamName, tuple[MessageData, ...]], ...] = ()
    failure_schedule: tuple[ScheduledFailure, ...] = ()
    recovery_delay_max: int = 1
    max_steps: int = 100
    seed: int = 0
    script: tuple[ScriptedChoice, ...] = ()
    name: str = ""

    def with_seed(self, seed: int) -> Scenario:
        return dataclasses.replace(self, seed=seed)

    def with_failures(self, failures: Sequence[ScheduledFailure]) -> Scenario:
        return dataclasses.replace(self, failure_schedule=tuple(sorted(failures)))


@dataclass(frozen=True)
class RunResult:
    execution: tuple[Configuration, ...]
    trace: Trace
    terminated: bool
    steps_taken: int
    stalled: bool = False

    @property
    def final(self) -> Configuration:
        return self.execution[-1]


def _check_source(path: str, messages: Sequence[MessageData]) -> list[ScenarioIssue]:
    issues: list[ScenarioIssue] = []
    expected = 1
    for n, data in enumerate(messages):
        where = f"{path}.{n}"
        if data.epoch != expected:
            issues.append(
                ScenarioIssue(where, f"epoch {data.epoch} where {expected} expected")
            )
            return issues
        if data.is_border:
            expected += 1
    if messages and not messages[-1].is_border:
        issues.append(ScenarioIssue(path, f"epoch {expected} has no closing border"))
    return issues


def _epoch_total(messages: Sequence[MessageData]) -> int:
    return sum(1 for data in messages if data.is_border)


def _topological_order(
    tasks: Sequence[TaskDef],
) -> tuple[list[int], list[int]]:
    """Task ids in dependency order, plus the ids left over on a cycle."""
    producer = {task.output: pid for pid, task in enumerate(tasks)}
    waiting = {
        pid: {producer[s] for s in task.inputs if s in producer}
        for pid, task in enumerate(tasks)
    }
    order: list[int] = []
    while True:
        ready = sorted(pid for pid, deps in waiting.items() if not deps)
        if not ready:
            break
        for pid in ready:
            order.append(pid)
            del waiting[pid]
        for deps in waiting.values():
            deps.difference_update(ready)
    return order, sorted(waiting)


def validate_scenario(s: Scenario) -> list[ScenarioIssue]:
    """Every violated Scenario invariant, with a path into the document."""
    issues: list[ScenarioIssue] = []
    if not s.tasks:
        return [ScenarioIssue("tasks", "at least one task is required")]
    if len(s.initial_values) != len(s.tasks):
        issues.append(
            ScenarioIssue("tasks", "one initial value per task is required")
        )

    sources: dict[StreamName, int] = {}
    for k, (stream, _) in enumerate(s.source_inputs):
        if stream in sources:
            issues.append(
                ScenarioIssue(f"sources.{k}.stream", f"stream {stream!r} repeated")
            )
        sources.setdefault(stream, k)

    outputs = {task.output for task in s.tasks}
    producers: dict[StreamName, int] = {}
    for pid, task in enumerate(s.tasks):
        path = f"tasks.{pid}"
        if not task.inputs:
            issues.append(ScenarioIssue(f"{path}.inputs", "inputs are empty"))
        if len(set(task.inputs)) != len(task.inputs):
            issues.append(ScenarioIssue(f"{path}.inputs", "an input is repeated"))
        if task.output in task.inputs:
            issues.append(
                ScenarioIssue(f"{path}.output", "output is also one of the inputs")
            )
        if task.function.kind is FunctionKind.IDENTITY and len(task.inputs) != 1:
            issues.append(
                ScenarioIssue(f"{path}.inputs", "identity takes exactly one input")
            )
        if task.output in producers:
            other = producers[task.output]
            issues.append(
                ScenarioIssue(
                    f"{path}.output",
                    f"stream {task.output!r} is already produced by task {other}",
                )
            )
        producers.setdefault(task.output, pid)
        if task.output in sources:
            issues.append(
                ScenarioIssue(
                    f"{path}.output", f"stream {task.output!r} is a source stream"
                )
            )
        for j, stream in enumerate(task.inputs):
            if stream not in sources and stream not in outputs:
                issues.append(
                    ScenarioIssue(f"{path}.inputs.{j}", f"unknown stream {stream!r}")
                )

    order, cyclic = _topological_order(s.tasks)
    if cyclic:
        names = ", ".join(s.tasks[pid].name or str(pid) for pid in cyclic)
        issues.append(ScenarioIssue("tasks", f"cyclic topology through {names}"))

    epoch_totals = set()
    for k, (_, messages) in enumerate(s.source_inputs):
        issues.extend(_check_source(f"sources.{k}.messages", messages))
        epoch_totals.add(_epoch_total(messages))
    if len(epoch_totals) > 1:
        issues.append(
            ScenarioIssue("sources", "all sources must carry the same epoch count")
        )

    for n, failure in enumerate(s.failure_schedule):
        if not 0 <= failure.processor < len(s.tasks):
            issues.append(
                ScenarioIssue(f"failures.{n}.task", f"no task {failure.processor}")
            )
        if failure.step_index < 0:
            issues.append(ScenarioIssue(f"failures.{n}.step", "negative step"))
    if s.recovery_delay_max < 0:
        issues.append(ScenarioIssue("policy.recovery_delay_max", "negative delay"))
    if s.max_steps < 0:
        issues.append(ScenarioIssue("policy.max_steps", "negative step budget"))
    for n, entry in enumerate(s.script):
        if not 0 <= entry.processor < len(s.tasks):
            issues.append(
                ScenarioIssue(f"policy.script.{n}.task", f"no task {entry.processor}")
            )
        elif entry.input_index is not None and not (
            0 <= entry.input_index < len(s.tasks[entry.processor].inputs)
        ):
            issues.append(ScenarioIssue(f"policy.script.{n}.input", "no such input"))

    if not issues:
        issues.extend(_check_types(s, order))
    return issues


def _check_types(s: Scenario, order: Sequence[int]) -> list[ScenarioIssue]:
    issues: list[ScenarioIssue] = []
    kinds: defaultdict[StreamName, set[ValueKind]] = defaultdict(set)
    for stream, messages in s.source_inputs:
        kinds[stream].update(
            kind_of(data.case.payload)
            for data in messages
            if isinstance(data.case, Event)
        )
    for pid in order:
        task = s.tasks[pid]
        try:
            check_state(task.function, s.initial_values[pid])
        except TaskTypeError as e:
            issues.append(ScenarioIssue(f"tasks.{pid}.initial_value", str(e)))
        received = set().union(*(kinds[stream] for stream in task.inputs))
        try:
            kinds[task.output] = set(output_kinds(task.function, received))
        except TaskTypeError as e:
            issues.append(ScenarioIssue(f"tasks.{pid}.function", str(e)))
    return issues


def build_initial(s: Scenario) -> Configuration:
    if issues := validate_scenario(s):
        raise ScenarioError(issues)

    initial = frozenset(
        Message(n, stream, data)
        for stream, messages in s.source_inputs
        for n, data in enumerate(messages)
    )
    return Configuration(
        processors=s.tasks,
        states=tuple(
            ProcessorState(Archive.seeded(value), Normal(1, value))
            for value in s.initial_values
        ),
        cursors=tuple(Cursors.zeroed(task.streams) for task in s.tasks),
        messages=initial,
        initial_inputs=initial,
    )


class Picker(Protocol):
    def __call__(
        self, c: Configuration, productive: Sequence[StepChoice]
    ) -> StepChoice | None: ...


class SeededPicker:
    """Uniform seeded choice, preceded by an optional script of preferences."""

    def __init__(self, seed: int, script: Sequence[ScriptedChoice] = ()) -> None:
        self._rng = random.Random(seed)
        self._script = deque(script)

    def __call__(
        self, c: Configuration, productive: Sequence[StepChoice]
    ) -> StepChoice | None:
        if self._script:
            preferred = self._script.popleft().as_choice()
            if preferred in productive:
                return preferred
            logger.debug("scripted %r not enabled, falling back", preferred)
        return self._rng.choice(productive)


class RoundRobinPicker:
    """Round robin over processors, each rotating over its inputs and border.

    A choice that stays enabled is taken within
    ``len(tasks) * (max fan-in + 1)`` picks.
    """

    def __init__(self, tasks: Sequence[TaskDef]) -> None:
        self._slots = [len(task.inputs) + 1 for task in tasks]
        self._next_processor = 0
        self._next_slot = [0] * len(tasks)

    def __call__(
        self, c: Configuration, productive: Sequence[StepChoice]
    ) -> StepChoice | None:
        offered: defaultdict[ProcessorId, dict[int, StepChoice]] = defaultdict(dict)
        for choice in productive:
            match choice:
                case EventChoice(p, j):
                    offered[p][j] = choice
                case BorderChoice(p):
                    offered[p][self._slots[p] - 1] = choice

        count = len(self._slots)
        for offset in range(count):
            p = (self._next_processor + offset) % count
            if p not in offered:
                continue
            slots = self._slots[p]
            for turn in range(slots):
                slot = (self._next_slot[p] + turn) % slots
                if slot in offered[p]:
                    self._next_slot[p] = (slot + 1) % slots
                    self._next_processor = (p + 1) % count
                    return offered[p][slot]
        return None


class StarvingPicker:
    """Never schedules the victim's Event or Border steps."""

    def __init__(self, victim: ProcessorId, inner: Picker) -> None:
        self._victim = victim
        self._inner = inner

    def __call__(
        self, c: Configuration, productive: Sequence[StepChoice]
    ) -> StepChoice | None:
        allowed = [
            choice
            for choice in productive
            if getattr(choice, "processor", None) != self._victim
        ]
        return self._inner(c, allowed) if allowed else None


def drive(
    start: Configuration,
    pick: Picker,
    *,
    failures: Sequence[ScheduledFailure] = (),
    recovery_delay_max: int = 1,
    max_steps: int = 100,
) -> RunResult:
    """Run from ``start`` until quiescence, a stall or ``max_steps``.

    Scheduled failures fire at their step index, one per step. A Recover is
    forced once a failure has waited ``max(recovery_delay_max, 1)`` steps,
    or at once when nothing else can move.
    """
    config = start
    execution = [config]
    trace: list[TraceStep] = []
    pending = deque(sorted(failures))
    delay = max(recovery_delay_max, 1)
    failed_since: int | None = None
    stalled = False

    while len(trace) < max_steps:
        index = len(trace)
        enabled = enabled_steps(config)
        productive = [
            choice
            for choice in enabled
            if isinstance(choice, (EventChoice, BorderChoice))
        ]
        can_recover = RECOVER in enabled
        if not productive and not can_recover:
            break
        if can_recover and failed_since is None:
            failed_since = index

        choice: StepChoice | None
        if pending and pending[0].step_index <= index:
            choice = FailChoice(pending.popleft().processor)
            logger.debug("step %d: injecting failure of %d", index, choice.processor)
        elif can_recover and (not productive or index - failed_since >= delay):
            choice = RECOVER
            logger.debug("step %d: recovering", index)
        else:
            choice = pick(config, productive)
            if choice is None:
                stalled = True
                break

        step, config = derive(config, choice)
        trace.append(step)
        execution.append(config)
        if isinstance(choice, FailChoice) and failed_since is None:
            failed_since = index
        elif isinstance(choice, RecoverChoice):
            failed_since = None

    if pending:
        logger.debug("dropping %d failures scheduled past the run", len(pending))
    return RunResult(
        execution=tuple(execution),
        trace=tuple(trace),
        terminated=is_quiescent(config),
        steps_taken=len(trace),
        stalled=stalled,
    )


def _drive_scenario(s: Scenario, pick: Picker) -> RunResult:
    result = drive(
        build_initial(s),
        pick,
        failures=s.failure_schedule,
        recovery_delay_max=s.recovery_delay_max,
        max_steps=s.max_steps,
    )
    logger.info(
        "%s: %d steps, terminated=%s",
        s.name or "scenario",
        result.steps_taken,
        result.terminated,
    )
    return result


def run(s: Scenario) -> RunResult:
    return _drive_scenario(s, SeededPicker(s.seed, s.script))


def run_fair(s: Scenario) -> RunResult:
    return _drive_scenario(s, RoundRobinPicker(s.tasks))


def run_starving(s: Scenario, victim: ProcessorId) -> RunResult:
    return _drive_scenario(s, StarvingPicker(victim, RoundRobinPicker(s.tasks)))


def extend_fair(c: Configuration, max_steps: int) -> RunResult:
    """Failure-free fair continuation from an arbitrary configuration."""
    return drive(c, RoundRobinPicker(c.processors), max_steps=max_steps)


@dataclass(frozen=True)
class LivenessReport:
    first_visible: dict[int, int | None]
    result: RunResult
    max_steps: int
    reason: str | None = None

    @property
    def holds(self) -> bool:
        return all(index is not None for index in self.first_visible.values())


def liveness_report(
    s: Scenario, *, starve: ProcessorId | None = None
) -> LivenessReport:
    result = run_fair(s) if starve is None else run_starving(s, starve)
    epochs = sorted({m.data.epoch for m in result.execution[0].initial_inputs})
    first_visible: dict[int, int | None] = dict.fromkeys(epochs)
    for index, config in enumerate(result.execution):
        visible = {m.data.epoch for m in out(config)}
        for epoch in epochs:
            if first_visible[epoch] is None and epoch in visible:
                first_visible[epoch] = index

    reason = None
    if any(index is None for index in first_visible.values()):
        if result.stalled:
            reason = "stalled"
        elif result.steps_taken >= s.max_steps and not result.terminated:
            reason = "budget exhausted"
        else:
            reason = "quiesced without producing"
    return LivenessReport(first_visible, result, s.max_steps, reason)


def check_liveness(s: Scenario) -> bool:
    return liveness_report(s).holds


def resolve_state_limit(limit: int | None = None) -> int:
    if limit is not None:
        return limit
    raw = os.environ.get(STATE_LIMIT_ENV)
    if raw is None:
        return DEFAULT_STATE_LIMIT
    try:
        return int(raw)
    except ValueError:
        raise ScenarioError(
            ScenarioIssue(STATE_LIMIT_ENV, f"not an integer: {raw!r}")
        ) from None


def enumerate_executions(
    s: Scenario,
    depth: int,
    failure_budget: int,
    *,
    state_limit: int | None = None,
) -> frozenset[Trace]:
    """All valid traces of length ``<= depth`` with at most ``failure_budget``
    Fail steps. A zero budget excludes Recover as well."""
    limit = resolve_state_limit(state_limit)
    memo: dict[tuple[Configuration, int, int], frozenset[Trace]] = {}

    def explore(c: Configuration, remaining: int, budget: int) -> frozenset[Trace]:
        key = (c, remaining, budget)
        if (known := memo.get(key)) is not None:
            return known
        if len(memo) >= limit:
            logger.warning("explorer stopped at %d nodes", limit)
            raise StateSpaceExceededError(limit)

        traces: set[Trace] = {()}
        if remaining > 0:
            for choice in enabled_steps(c):
                if isinstance(choice, FailChoice) and budget == 0:
                    continue
                if isinstance(choice, RecoverChoice) and failure_budget == 0:
                    continue
                step, target = derive(c, choice)
                spent = budget - 1 if isinstance(choice, FailChoice) else budget
                traces.update(
                    (step, *suffix) for suffix in explore(target, remaining - 1, spent)
                )
        memo[key] = frozenset(traces)
        return memo[key]

    traces = explore(build_initial(s), depth, failure_budget)
    logger.info("explored %d nodes, %d traces", len(memo), len(traces))
    return traces


def resample_failures(s: Scenario, seed: int, max_failures: int = 2) -> Scenario:
    """Same scenario under ``seed`` with a failure schedule drawn from it."""
    seeded = dataclasses.replace(s.with_seed(seed), failure_schedule=())
    horizon = max(run(seeded).steps_taken, 1)
    rng = random.Random(seed)
    failures = [
        ScheduledFailure(rng.randrange(horizon), rng.randrange(len(s.tasks)))
        for _ in range(rng.randint(0, max_failures))
    ]
    return seeded.with_failures(failures)


_SINGLE_INPUT: Final = (
    FunctionKind.INCREMENTAL_AVERAGE,
    FunctionKind.SUM,
    FunctionKind.COUNT,
    FunctionKind.MAP_ADD_CONSTANT,
    FunctionKind.IDENTITY,
    FunctionKind.FILTER_GREATER_THAN,
    FunctionKind.FORWARD,
)
_MULTI_INPUT: Final = (
    FunctionKind.INCREMENTAL_AVERAGE,
    FunctionKind.SUM,
    FunctionKind.COUNT,
    FunctionKind.FORWARD,
)


def random_scenario(
    rng: random.Random,
    *,
    max_tasks: int = 3,
    max_epochs: int = 3,
    max_failures: int = 2,
    max_steps: int = 60,
) -> Scenario:
    """Small random integer pipeline used by the randomized checks."""
    epochs = rng.randint(1, max_epochs)
    source_inputs = []
    for k in range(rng.randint(1, 2)):
        messages: list[MessageData] = []
        for epoch in range(1, epochs + 1):
            messages.extend(
                MessageData.event(epoch, rng.randint(0, 9))
                for _ in range(rng.randint(0, 2))
            )
            messages.append(MessageData.border(epoch))
        source_inputs.append((f"in{k}", tuple(messages)))

    streams = [stream for stream, _ in source_inputs]
    tasks: list[TaskDef] = []
    for pid in range(rng.randint(1, max_tasks)):
        fan_in = rng.randint(1, min(2, len(streams)))
        kinds = _SINGLE_INPUT if fan_in == 1 else _MULTI_INPUT
        function = TaskFunction(rng.choice(kinds), rng.randint(0, 5))
        inputs = tuple(rng.sample(streams, fan_in))
        tasks.append(TaskDef(function, inputs, f"s{pid}", f"t{pid}"))
        streams.append(f"s{pid}")

    failures = [
        ScheduledFailure(rng.randrange(40), rng.randrange(len(tasks)))
        for _ in range(rng.randint(0, max_failures))
    ]
    return Scenario(
        tasks=tuple(tasks),
        initial_values=tuple(initial_state(task.function) for task in tasks),
        source_inputs=tuple(source_inputs),
        failure_schedule=tuple(sorted(failures)),
        recovery_delay_max=rng.randint(0, 3),
        max_steps=max_steps,
        seed=rng.randrange(2**16),
        name="random",
    )
