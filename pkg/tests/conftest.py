"""Pytest configuration and shared fixtures."""

from pathlib import Path

import pytest

from absflow.sim import Scenario
from absflow.model import UNIT, TaskDef, MessageData
from absflow.scenario import SCENARIO_DIR, parse_scenario
from absflow.functions import FunctionKind, TaskFunction

# 随包附带的示例场景
AVERAGE_PATH = SCENARIO_DIR / "incremental_average.json"
PIPELINE_PATH = SCENARIO_DIR / "pipeline.json"


@pytest.fixture(scope="session")
def average_path() -> Path:
    return AVERAGE_PATH


@pytest.fixture(scope="session")
def pipeline_path() -> Path:
    return PIPELINE_PATH


@pytest.fixture(scope="session")
def average_scenario() -> Scenario:
    """单任务增量平均值场景, 脚本化调度复现手绘执行。"""
    return parse_scenario(AVERAGE_PATH.read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def pipeline_scenario() -> Scenario:
    return parse_scenario(PIPELINE_PATH.read_text(encoding="utf-8"))


def source(*epochs: list[int]) -> tuple[MessageData, ...]:
    """Event payloads per epoch, each epoch closed by its border."""
    messages: list[MessageData] = []
    for epoch, payloads in enumerate(epochs, start=1):
        messages.extend(MessageData.event(epoch, w) for w in payloads)
        messages.append(MessageData.border(epoch))
    return tuple(messages)


@pytest.fixture(scope="session")
def sum_scenario() -> Scenario:
    """One summing task over ``in = [[1], [2]]``, writing to ``out``."""
    return Scenario(
        tasks=(TaskDef(TaskFunction(FunctionKind.SUM), ("in",), "out", "adder"),),
        initial_values=(0,),
        source_inputs=(("in", source([1], [2])),),
        max_steps=40,
        name="sum",
    )


@pytest.fixture(scope="session")
def broadcast_scenario() -> Scenario:
    """Two identity tasks reading the same source stream."""
    identity = TaskFunction(FunctionKind.IDENTITY)
    return Scenario(
        tasks=(
            TaskDef(identity, ("in",), "left", "left"),
            TaskDef(identity, ("in",), "right", "right"),
        ),
        initial_values=(UNIT, UNIT),
        source_inputs=(("in", source([5])),),
        max_steps=40,
        name="broadcast",
    )


@pytest.fixture(scope="session")
def two_task_scenario() -> Scenario:
    """``in = [[1], [2]]`` through an add-one task into a summing task."""
    return Scenario(
        tasks=(
            TaskDef(
                TaskFunction(FunctionKind.MAP_ADD_CONSTANT, 1), ("in",), "mid", "inc"
            ),
            TaskDef(TaskFunction(FunctionKind.SUM), ("mid",), "out", "adder"),
        ),
        initial_values=(UNIT, 0),
        source_inputs=(("in", source([1], [2])),),
        max_steps=40,
        name="two_task",
    )
