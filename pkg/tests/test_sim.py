import dataclasses
from random import Random

import pytest

from conftest import source


def test_runs_are_deterministic(pipeline_scenario):
    from absflow.sim import run

    assert run(pipeline_scenario) == run(pipeline_scenario)
    traces = {run(pipeline_scenario.with_seed(seed)).trace for seed in range(10)}
    assert len(traces) > 1


def test_pipeline_output(pipeline_scenario):
    from absflow.sim import run
    from absflow.model import Event, out

    result = run(pipeline_scenario)
    assert result.terminated
    sums = sorted(
        (m.data.epoch, m.data.case.payload)
        for m in out(result.final)
        if m.stream == "sums" and isinstance(m.data.case, Event)
    )
    assert sums == [(1, 3), (2, 7)]


def test_failures_are_injected_and_recovered(pipeline_scenario):
    from absflow.sim import run
    from absflow.trace import FailStep, RecoverStep

    result = run(pipeline_scenario)
    assert result.trace[4] == FailStep(1)
    recover = next(
        i for i, step in enumerate(result.trace) if isinstance(step, RecoverStep)
    )
    # recovery_delay_max is 2
    assert 5 <= recover <= 6


def test_failures_after_quiescence_are_dropped(sum_scenario):
    from absflow.sim import ScheduledFailure, run
    from absflow.trace import FailStep

    result = run(sum_scenario.with_failures([ScheduledFailure(50, 0)]))
    assert not any(isinstance(step, FailStep) for step in result.trace)
    assert result.terminated


def test_step_budget(pipeline_scenario):
    from absflow.sim import run

    result = run(dataclasses.replace(pipeline_scenario, max_steps=3))
    assert result.steps_taken == 3
    assert not result.terminated


def test_drive_with_a_custom_picker(sum_scenario):
    from absflow.sim import drive, build_initial

    result = drive(build_initial(sum_scenario), lambda c, productive: None)
    assert result.stalled
    assert result.trace == ()


def test_validation_reports_every_issue():
    from absflow.sim import Scenario, validate_scenario
    from absflow.model import UNIT, TaskDef
    from absflow.functions import FunctionKind, TaskFunction

    identity = TaskFunction(FunctionKind.IDENTITY)
    scenario = Scenario(
        tasks=(
            TaskDef(identity, ("in", "b"), "a", "p"),
            TaskDef(identity, ("a",), "b", "q"),
            TaskDef(identity, ("ghost",), "b", "r"),
        ),
        initial_values=(UNIT, UNIT, UNIT),
        source_inputs=(("in", source([1])), ("in", source([1]))),
    )
    paths = {issue.path for issue in validate_scenario(scenario)}
    assert paths >= {
        "sources.1.stream",
        "tasks.0.inputs",
        "tasks.2.output",
        "tasks.2.inputs.0",
    }
    assert validate_scenario(dataclasses.replace(scenario, tasks=())) != []


def test_validation_rejects_cycles():
    from absflow.sim import Scenario, validate_scenario
    from absflow.model import UNIT, TaskDef
    from absflow.functions import FunctionKind, TaskFunction

    forward = TaskFunction(FunctionKind.FORWARD)
    scenario = Scenario(
        tasks=(
            TaskDef(forward, ("x", "b"), "a", "p"),
            TaskDef(forward, ("a",), "b", "q"),
        ),
        initial_values=(UNIT, UNIT),
        source_inputs=(("x", source([1])),),
    )
    issues = validate_scenario(scenario)
    assert [issue.path for issue in issues] == ["tasks"]
    assert "cyclic topology through p, q" in issues[0].message


def test_validation_of_sources():
    from absflow.sim import Scenario, validate_scenario
    from absflow.model import TaskDef, MessageData
    from absflow.functions import FunctionKind, TaskFunction

    adder = TaskFunction(FunctionKind.SUM)
    base = Scenario(
        tasks=(TaskDef(adder, ("x", "y"), "out"),),
        initial_values=(0,),
        source_inputs=(("x", source([1], [2])), ("y", source([3]))),
    )
    messages = [issue.message for issue in validate_scenario(base)]
    assert any("same epoch count" in message for message in messages)

    unclosed = dataclasses.replace(
        base,
        source_inputs=(
            ("x", (MessageData.event(1, 1),)),
            ("y", (MessageData.border(1),)),
        ),
    )
    assert any(
        issue.path == "sources.0.messages"
        for issue in validate_scenario(unclosed)
    )

    skipped = dataclasses.replace(
        base,
        source_inputs=(("x", (MessageData.border(2),)), ("y", source([]))),
    )
    assert any(
        issue.path == "sources.0.messages.0"
        for issue in validate_scenario(skipped)
    )


def test_validation_propagates_value_kinds():
    from absflow.sim import Scenario, validate_scenario
    from absflow.model import UNIT, RESET, TaskDef, MessageData
    from absflow.functions import FunctionKind, TaskFunction

    resets = (MessageData.event(1, RESET), MessageData.border(1))
    scenario = Scenario(
        tasks=(
            TaskDef(TaskFunction(FunctionKind.FORWARD), ("r",), "a"),
            TaskDef(TaskFunction(FunctionKind.FILTER_GREATER_THAN, 1), ("a",), "b"),
        ),
        initial_values=(UNIT, UNIT),
        source_inputs=(("r", resets),),
    )
    assert [issue.path for issue in validate_scenario(scenario)] == [
        "tasks.1.function"
    ]

    wrong_state = dataclasses.replace(
        scenario,
        tasks=(TaskDef(TaskFunction(FunctionKind.SUM), ("r",), "a"),),
        initial_values=(UNIT,),
    )
    assert [issue.path for issue in validate_scenario(wrong_state)] == [
        "tasks.0.initial_value"
    ]


def test_build_initial(pipeline_scenario):
    from absflow.sim import Scenario, build_initial
    from absflow.model import Normal, well_formed
    from absflow.exceptions import ScenarioError

    c = build_initial(pipeline_scenario)
    assert well_formed(c)
    assert c.messages == c.initial_inputs
    assert len(c.messages) == 5
    assert all(state.volatile.epoch == 1 for state in c.states)
    assert isinstance(c.states[2].volatile, Normal)

    with pytest.raises(ScenarioError):
        build_initial(Scenario(tasks=(), initial_values=()))


def test_scripted_choices_fall_back_to_the_seed(average_scenario):
    from absflow.sim import ScriptedChoice, run
    from absflow.trace import BorderStep

    # a border cannot be the first step, so the first entry is skipped
    scripted = dataclasses.replace(
        average_scenario,
        failure_schedule=(),
        script=(ScriptedChoice(0), ScriptedChoice(0)),
    )
    result = run(scripted)
    assert not isinstance(result.trace[0], BorderStep)
    assert isinstance(result.trace[1], BorderStep)


def test_fair_scheduler_bound(pipeline_scenario):
    """A continuously enabled choice is taken within tasks * (fan-in + 1) picks."""
    from absflow.sim import run_fair
    from absflow.semantics import FailChoice, RecoverChoice, choice_of, enabled_steps

    scenario = pipeline_scenario.with_failures(())
    result = run_fair(scenario)
    assert result.terminated

    bound = len(scenario.tasks) * (max(len(t.inputs) for t in scenario.tasks) + 1)
    taken = [choice_of(step, c) for step, c in zip(result.trace, result.execution)]
    enabled = [
        {
            choice
            for choice in enabled_steps(c)
            if not isinstance(choice, (FailChoice, RecoverChoice))
        }
        for c in result.execution
    ]
    for i in range(len(taken)):
        for choice in enabled[i]:
            waited = 0
            for k in range(i, len(taken)):
                if taken[k] == choice or choice not in enabled[k]:
                    break
                waited += 1
            assert waited < bound


def test_liveness(pipeline_scenario, average_scenario):
    from absflow.sim import check_liveness, liveness_report

    report = liveness_report(pipeline_scenario)
    assert report.holds
    assert report.reason is None
    assert set(report.first_visible) == {1, 2}
    assert report.first_visible[1] < report.first_visible[2]
    assert check_liveness(average_scenario)


def test_liveness_failures(pipeline_scenario):
    from absflow.sim import liveness_report

    starved = liveness_report(pipeline_scenario.with_failures(()), starve=1)
    assert not starved.holds
    assert starved.reason == "stalled"

    short = liveness_report(dataclasses.replace(pipeline_scenario, max_steps=3))
    assert not short.holds
    assert short.reason == "budget exhausted"


def test_liveness_on_generated_scenarios():
    from absflow.sim import random_scenario, liveness_report

    rng = Random(2024)
    for _ in range(20):
        scenario = random_scenario(rng, max_steps=2000)
        report = liveness_report(scenario)
        assert report.holds, (scenario, report.reason)
        assert report.result.terminated


def test_liveness_with_zero_epochs():
    from absflow.sim import Scenario, liveness_report
    from absflow.model import TaskDef
    from absflow.functions import FunctionKind, TaskFunction

    empty = Scenario(
        tasks=(TaskDef(TaskFunction(FunctionKind.SUM), ("in",), "out"),),
        initial_values=(0,),
        source_inputs=(("in", ()),),
    )
    report = liveness_report(empty)
    assert report.holds
    assert report.first_visible == {}


def test_generated_scenarios_are_valid():
    from absflow.sim import random_scenario, validate_scenario

    rng = Random(7)
    for _ in range(50):
        scenario = random_scenario(rng)
        assert validate_scenario(scenario) == []
        assert len(scenario.tasks) <= 3
        assert len(scenario.failure_schedule) <= 2


def test_resample_failures(sum_scenario):
    from absflow.sim import resample_failures

    first = resample_failures(sum_scenario, 11)
    assert first == resample_failures(sum_scenario, 11)
    assert first.seed == 11
    assert len(first.failure_schedule) <= 2
    assert all(f.processor == 0 for f in first.failure_schedule)


def test_enumerate_executions(average_scenario):
    from absflow.sim import build_initial, enumerate_executions
    from absflow.trace import FailStep, RecoverStep, is_valid

    traces = enumerate_executions(average_scenario, 3, 0)
    assert len(traces) == 5
    assert () in traces

    initial = build_initial(average_scenario)
    with_failures = enumerate_executions(average_scenario, 4, 1)
    assert all(is_valid(z, initial) for z in with_failures)
    assert all(
        sum(isinstance(step, FailStep) for step in z) <= 1 for z in with_failures
    )
    assert any(isinstance(step, RecoverStep) for z in with_failures for step in z)
    assert traces < with_failures


def test_enumerate_single_event():
    from absflow.sim import Scenario, enumerate_executions
    from absflow.model import UNIT, TaskDef
    from absflow.trace import EventStep, BorderStep
    from absflow.functions import FunctionKind, TaskFunction

    scenario = Scenario(
        tasks=(TaskDef(TaskFunction(FunctionKind.FORWARD), ("in",), "out"),),
        initial_values=(UNIT,),
        source_inputs=(("in", source([7])),),
    )
    traces = enumerate_executions(scenario, 2, 0)
    assert sorted(len(z) for z in traces) == [0, 1, 2]
    longest = max(traces, key=len)
    assert isinstance(longest[0], EventStep)
    assert isinstance(longest[1], BorderStep)
    assert longest[:1] in traces


def test_runs_are_members_of_the_explored_set(pipeline_scenario):
    from absflow.sim import run, run_fair, enumerate_executions
    from absflow.trace import FailStep

    depth = 6
    explored = enumerate_executions(pipeline_scenario, depth, 1)
    runs = [run(pipeline_scenario.with_seed(seed)) for seed in range(10)]
    runs.append(run_fair(pipeline_scenario))
    for result in runs:
        prefix = result.trace[:depth]
        assert sum(isinstance(step, FailStep) for step in prefix) <= 1
        assert prefix in explored


def test_explorer_state_limit(average_scenario, monkeypatch):
    from absflow.sim import STATE_LIMIT_ENV, enumerate_executions
    from absflow.exceptions import ScenarioError, StateSpaceExceededError

    with pytest.raises(StateSpaceExceededError):
        enumerate_executions(average_scenario, 8, 1, state_limit=3)

    monkeypatch.setenv(STATE_LIMIT_ENV, "3")
    with pytest.raises(StateSpaceExceededError) as exc_info:
        enumerate_executions(average_scenario, 8, 1)
    assert exc_info.value.limit == 3

    monkeypatch.setenv(STATE_LIMIT_ENV, "many")
    with pytest.raises(ScenarioError):
        enumerate_executions(average_scenario, 2, 0)
