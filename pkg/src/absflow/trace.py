"""Traces: recorded derivations, their replay, and the causal order on them."""

from __future__ import annotations

from random import Random
from typing import NamedTuple
from functools import lru_cache
from dataclasses import dataclass
from collections import defaultdict
from collections.abc import Iterable, Sequence

from .model import (
    Action,
    Cursors,
    Message,
    Polarity,
    ProcessorId,
    Configuration,
    display_data,
    message_sort_key,
)


@dataclass(frozen=True)
class EventStep:
    processor: ProcessorId
    cursors: Cursors
    actions: tuple[Action, ...]


@dataclass(frozen=True)
class BorderStep:
    processor: ProcessorId
    cursors: Cursors
    actions: tuple[Action, ...]


@dataclass(frozen=True)
class FailStep:
    processor: ProcessorId


@dataclass(frozen=True)
class RecoverStep:
    pass


RECOVER_STEP = RecoverStep()

TraceStep = EventStep | BorderStep | FailStep | RecoverStep
Trace = tuple[TraceStep, ...]


class InvalidTrace(NamedTuple):
    index: int
    reason: str


def step_epoch(s: TraceStep) -> int | None:
    """Epoch of the messages an Event or Border step consumes."""
    match s:
        case EventStep(actions=actions) | BorderStep(actions=actions):
            return actions[0].data.epoch
        case _:
            return None


def _walk(step: TraceStep, polarity: Polarity) -> tuple[Message, ...]:
    if not isinstance(step, (EventStep, BorderStep)):
        return ()
    row = step.cursors
    found: list[Message] = []
    for action in step.actions:
        if action.polarity is polarity:
            found.append(Message(row[action.stream], action.stream, action.data))
        row = row.advanced(action.stream)
    return tuple(found)


def produced_messages(step: TraceStep) -> tuple[Message, ...]:
    return _walk(step, Polarity.PRODUCE)


def consumed_messages(step: TraceStep) -> tuple[Message, ...]:
    return _walk(step, Polarity.CONSUME)


def apply_trace(
    z: Trace, c: Configuration
) -> tuple[Configuration, ...] | InvalidTrace:
    """Replay ``z`` from ``c``.

    Each recorded step must coincide with the derivation of the same rule at
    the current configuration: same processor, same cursor row and the same
    actions. The first step that does not is reported as InvalidTrace.
    """
    from .semantics import derive, choice_of
    from .exceptions import StepNotEnabledError

    configurations = [c]
    for index, step in enumerate(z):
        current = configurations[-1]
        choice = choice_of(step, current)
        if choice is None:
            return InvalidTrace(index, "step does not match any rule instance")
        try:
            derivation = derive(current, choice)
        except StepNotEnabledError as e:
            return InvalidTrace(index, str(e))
        if derivation.step != step:
            return InvalidTrace(index, "recorded cursors or actions differ")
        configurations.append(derivation.target)
    return tuple(configurations)


def is_valid(z: Trace, c: Configuration) -> bool:
    return not isinstance(apply_trace(z, c), InvalidTrace)


class CausalOrder:
    """Happens-before on the steps of one trace, as reachability bitsets.

    ``i`` happens before ``j`` when ``i < j`` and either step is a Recover,
    both steps act on the same processor, ``j`` consumes a message ``i``
    produced, or a chain of these links them.
    """

    def __init__(self, z: Trace) -> None:
        self.trace = z
        self._reach = _closure(_direct(z))

    def __len__(self) -> int:
        return len(self.trace)

    def before(self, i: int, j: int) -> bool:
        return i < j and bool(self._reach[i] >> j & 1)

    def successors(self, i: int) -> Iterable[int]:
        bits = self._reach[i]
        return (j for j in range(i + 1, len(self.trace)) if bits >> j & 1)

    def pairs(self) -> Iterable[tuple[int, int]]:
        for i in range(len(self.trace)):
            for j in self.successors(i):
                yield i, j


def _direct(z: Trace) -> list[int]:
    n = len(z)
    everything_after = [((1 << n) - 1) & ~((1 << (i + 1)) - 1) for i in range(n)]
    direct = [0] * n
    producers: defaultdict[Message, list[int]] = defaultdict(list)
    last_on: dict[ProcessorId, int] = {}

    for j, step in enumerate(z):
        if isinstance(step, RecoverStep):
            direct[j] = everything_after[j]
            for i in range(j):
                direct[i] |= 1 << j
            continue
        if (i := last_on.get(step.processor)) is not None:
            direct[i] |= 1 << j
        last_on[step.processor] = j
        for message in consumed_messages(step):
            for i in producers.get(message, ()):
                direct[i] |= 1 << j
        for message in produced_messages(step):
            producers[message].append(j)
    return direct


def _closure(direct: list[int]) -> list[int]:
    reach = list(direct)
    for i in range(len(reach) - 1, -1, -1):
        bits = direct[i]
        j = i + 1
        pending = bits >> j
        while pending:
            if pending & 1:
                reach[i] |= reach[j]
            pending >>= 1
            j += 1
    return reach


@lru_cache(maxsize=128)
def causal_order(z: Trace) -> CausalOrder:
    return CausalOrder(z)


def happens_before(z: Trace, i: int, j: int) -> bool:
    return causal_order(z).before(i, j)


def is_causality_preserving_permutation(
    z: Trace, z2: Trace, f: Sequence[int]
) -> bool:
    n = len(z)
    if len(z2) != n or sorted(f) != list(range(n)):
        return False
    if any(z[i] != z2[f[i]] for i in range(n)):
        return False
    return all(f[i] < f[j] for i, j in causal_order(z).pairs())


def sample_linear_extension(
    z: Trace, rng: Random
) -> tuple[Trace, tuple[int, ...]]:
    """Random reordering of ``z`` that respects happens-before.

    Returns the permuted trace and the bijection f with ``z[i] == z2[f[i]]``.
    """
    order = causal_order(z)
    n = len(z)
    waiting = [0] * n
    for _, j in order.pairs():
        waiting[j] += 1

    ready = [i for i in range(n) if waiting[i] == 0]
    f = [0] * n
    permuted: list[TraceStep] = []
    while ready:
        i = ready.pop(rng.randrange(len(ready)))
        f[i] = len(permuted)
        permuted.append(z[i])
        for j in order.successors(i):
            waiting[j] -= 1
            if waiting[j] == 0:
                ready.append(j)
        ready.sort()
    return tuple(permuted), tuple(f)


def format_step(step: TraceStep) -> str:
    def positions(messages: Iterable[Message]) -> str:
        return ",".join(f"{m.stream}@{m.seq}" for m in messages)

    match step:
        case EventStep(processor=p) | BorderStep(processor=p):
            tag = "EVENT" if isinstance(step, EventStep) else "BORDER"
            return (
                f"{tag} p={p} epoch={step_epoch(step)}"
                f" consume={positions(consumed_messages(step))}"
                f" produce={positions(produced_messages(step))}"
            )
        case FailStep(processor=p):
            return f"FAIL p={p}"
        case _:
            return "RECOVER"


def format_trace(z: Trace) -> str:
    return "\n".join(format_step(step) for step in z)


def format_out(messages: Iterable[Message]) -> str:
    return "\n".join(
        f"out {m.stream} seq={m.seq} epoch={m.data.epoch} {display_data(m.data)}"
        for m in sorted(messages, key=message_sort_key)
    )
