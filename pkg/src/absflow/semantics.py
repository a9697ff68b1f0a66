"""The derivation rules over configurations.

Four rules move a configuration forward: a task processes an event, a task
aligns the borders of all its inputs and snapshots its state, a task fails,
and the whole system recovers to its latest common snapshot.
"""

from __future__ import annotations

import logging
from typing import Final, TypeVar, NamedTuple
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from collections.abc import Iterator

from .model import (
    FAILED,
    Event,
    Action,
    Normal,
    Message,
    ProcessorId,
    MessageData,
    Configuration,
    ProcessorState,
    lcs,
    apply_actions,
)
from .trace import (
    RECOVER_STEP,
    FailStep,
    TraceStep,
    EventStep,
    BorderStep,
    RecoverStep,
)
from .functions import eval_task_function
from .exceptions import StepNotEnabledError

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class EventChoice:
    processor: ProcessorId
    input_index: int


@dataclass(frozen=True)
class BorderChoice:
    processor: ProcessorId


@dataclass(frozen=True)
class FailChoice:
    processor: ProcessorId


@dataclass(frozen=True)
class RecoverChoice:
    pass


RECOVER: Final = RecoverChoice()

StepChoice = EventChoice | BorderChoice | FailChoice | RecoverChoice


class Derivation(NamedTuple):
    step: TraceStep
    target: Configuration


_skip_purge: ContextVar[bool] = ContextVar("absflow_skip_lcs_purge", default=False)


@contextmanager
def skip_lcs_purge() -> Iterator[None]:
    """Engine mutation for checker sensitivity tests.

    While active, recovery keeps every message instead of purging the
    uncommitted ones, which breaks failure transparency on purpose.
    """
    token = _skip_purge.set(True)
    logger.warning("recovery message purge disabled")
    try:
        yield
    finally:
        _skip_purge.reset(token)


def _next_messages(c: Configuration, p: ProcessorId, j: int) -> tuple[Message, ...]:
    task = c.processors[p]
    stream = task.inputs[j]
    return c.at(stream, c.cursors[p][stream])


def _next_event(c: Configuration, p: ProcessorId, j: int, epoch: int) -> Message | None:
    for message in _next_messages(c, p, j):
        if not message.data.is_border and message.data.epoch == epoch:
            return message
    return None


def _borders_aligned(c: Configuration, p: ProcessorId, epoch: int) -> bool:
    border = MessageData.border(epoch)
    return all(
        any(m.data == border for m in _next_messages(c, p, j))
        for j in range(len(c.processors[p].inputs))
    )


def enabled_steps(c: Configuration) -> tuple[StepChoice, ...]:
    """Every choice whose application succeeds at ``c``.

    Ordered by processor id, then events by input index, border, fail;
    Recover comes last.
    """
    choices: list[StepChoice] = []
    for p, state in enumerate(c.states):
        if isinstance(state.volatile, Normal):
            epoch = state.volatile.epoch
            for j in range(len(c.processors[p].inputs)):
                if _next_event(c, p, j, epoch) is not None:
                    choices.append(EventChoice(p, j))
            if _borders_aligned(c, p, epoch):
                choices.append(BorderChoice(p))
        choices.append(FailChoice(p))
    if any(state.failed for state in c.states):
        choices.append(RECOVER)
    return tuple(choices)


def is_quiescent(c: Configuration) -> bool:
    """No Event, Border or Recover step is enabled; Fail always is."""
    return all(isinstance(choice, FailChoice) for choice in enabled_steps(c))


def _check_processor(c: Configuration, choice: StepChoice, p: ProcessorId) -> None:
    if not 0 <= p < len(c.processors):
        raise StepNotEnabledError(choice, f"no processor {p}")


def _normal(c: Configuration, choice: StepChoice, p: ProcessorId) -> Normal:
    _check_processor(c, choice, p)
    volatile = c.states[p].volatile
    if not isinstance(volatile, Normal):
        raise StepNotEnabledError(choice, f"processor {p} has failed")
    return volatile


def _replace_at(items: tuple[T, ...], index: int, item: T) -> tuple[T, ...]:
    return (*items[:index], item, *items[index + 1 :])


def _derive_event(c: Configuration, choice: EventChoice) -> Derivation:
    p, j = choice.processor, choice.input_index
    epoch, value = _normal(c, choice, p)
    task = c.processors[p]
    if not 0 <= j < len(task.inputs):
        raise StepNotEnabledError(choice, f"task {p} has no input {j}")
    message = _next_event(c, p, j, epoch)
    if message is None:
        raise StepNotEnabledError(choice, f"no epoch-{epoch} event at the cursor")

    assert isinstance(message.data.case, Event)
    new_value, outputs = eval_task_function(
        task.function, value, message.data.case.payload
    )
    actions = (
        Action.consume(message.stream, message.data),
        *(Action.produce(task.output, MessageData.event(epoch, w)) for w in outputs),
    )
    row = c.cursors[p]
    applied = apply_actions(actions, row, c.messages)
    assert applied is not None
    new_row, messages = applied

    state = ProcessorState(c.states[p].archive, Normal(epoch, new_value))
    target = c.replace(
        states=_replace_at(c.states, p, state),
        cursors=_replace_at(c.cursors, p, new_row),
        messages=messages,
    )
    return Derivation(EventStep(p, row, actions), target)


def _derive_border(c: Configuration, choice: BorderChoice) -> Derivation:
    p = choice.processor
    epoch, value = _normal(c, choice, p)
    task = c.processors[p]
    border = MessageData.border(epoch)
    actions = (
        *(Action.consume(stream, border) for stream in task.inputs),
        Action.produce(task.output, border),
    )
    row = c.cursors[p]
    applied = apply_actions(actions, row, c.messages)
    if applied is None:
        raise StepNotEnabledError(choice, f"epoch-{epoch} borders are not aligned")
    new_row, messages = applied

    archive = c.states[p].archive.stored(epoch, value)
    state = ProcessorState(archive, Normal(epoch + 1, value))
    target = c.replace(
        states=_replace_at(c.states, p, state),
        cursors=_replace_at(c.cursors, p, new_row),
        messages=messages,
    )
    return Derivation(BorderStep(p, row, actions), target)


def _derive_fail(c: Configuration, choice: FailChoice) -> Derivation:
    p = choice.processor
    _check_processor(c, choice, p)
    state = ProcessorState(c.states[p].archive, FAILED)
    target = c.replace(states=_replace_at(c.states, p, state))
    return Derivation(FailStep(p), target)


def _derive_recover(c: Configuration, choice: RecoverChoice) -> Derivation:
    if not any(state.failed for state in c.states):
        raise StepNotEnabledError(choice, "no processor has failed")
    target = lcs(c)
    if _skip_purge.get():
        target = target.replace(messages=c.messages)
    return Derivation(RECOVER_STEP, target)


def derive(c: Configuration, choice: StepChoice) -> Derivation:
    """Apply ``choice`` and return the annotated step with its target."""
    match choice:
        case EventChoice():
            return _derive_event(c, choice)
        case BorderChoice():
            return _derive_border(c, choice)
        case FailChoice():
            return _derive_fail(c, choice)
        case RecoverChoice():
            return _derive_recover(c, choice)
    raise StepNotEnabledError(choice, "unknown choice")


def apply_choice(c: Configuration, choice: StepChoice) -> Configuration:
    return derive(c, choice).target


def step_event(c: Configuration, p: ProcessorId, j: int) -> Configuration:
    return _derive_event(c, EventChoice(p, j)).target


def step_border(c: Configuration, p: ProcessorId) -> Configuration:
    return _derive_border(c, BorderChoice(p)).target


def step_fail(c: Configuration, p: ProcessorId) -> Configuration:
    return _derive_fail(c, FailChoice(p)).target


def step_recover(c: Configuration) -> Configuration:
    return _derive_recover(c, RECOVER).target


def choice_of(step: TraceStep, c: Configuration) -> StepChoice | None:
    """The rule instance a recorded step claims to be, resolved against ``c``."""
    match step:
        case EventStep(processor=p, actions=actions):
            if not 0 <= p < len(c.processors) or not actions:
                return None
            inputs = c.processors[p].inputs
            stream = actions[0].stream
            return EventChoice(p, inputs.index(stream)) if stream in inputs else None
        case BorderStep(processor=p):
            return BorderChoice(p)
        case FailStep(processor=p):
            return FailChoice(p)
        case RecoverStep():
            return RECOVER
    return None
