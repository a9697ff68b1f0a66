"""Configurations of the dataflow transition system and the pure functions
over them: action application, gce, out, lcs and well-formedness."""

from __future__ import annotations

from enum import Enum
from typing import TYPE_CHECKING, Final, NamedTuple
from functools import cached_property
from dataclasses import field, dataclass
from collections import Counter, defaultdict
from collections.abc import Iterable, Iterator, Sequence

from .exceptions import ConfigurationError

if TYPE_CHECKING:
    from .functions import TaskFunction

StreamName = str
ProcessorId = int


class Tag(str, Enum):
    RESET = "reset"
    UNIT = "unit"

    def __str__(self) -> str:
        return self.value


RESET: Final = Tag.RESET
UNIT: Final = Tag.UNIT


@dataclass(frozen=True, order=True)
class Record:
    """Integer record such as ``{sum, count}``; fields are kept sorted."""

    items: tuple[tuple[str, int], ...] = ()

    @classmethod
    def of(cls, **fields: int) -> Record:
        return cls(tuple(sorted(fields.items())))

    def __getitem__(self, name: str) -> int:
        for key, value in self.items:
            if key == name:
                return value
        raise KeyError(name)

    def keys(self) -> tuple[str, ...]:
        return tuple(key for key, _ in self.items)


Value = int | Record | Tag


@dataclass(frozen=True)
class Event:
    payload: Value


@dataclass(frozen=True)
class Border:
    pass


BORDER: Final = Border()


class MessageData(NamedTuple):
    epoch: int
    case: Event | Border

    @property
    def is_border(self) -> bool:
        return isinstance(self.case, Border)

    @classmethod
    def event(cls, epoch: int, payload: Value) -> MessageData:
        return cls(epoch, Event(payload))

    @classmethod
    def border(cls, epoch: int) -> MessageData:
        return cls(epoch, BORDER)


class Message(NamedTuple):
    seq: int
    stream: StreamName
    data: MessageData


class Polarity(Enum):
    PRODUCE = "+"
    CONSUME = "-"


class Action(NamedTuple):
    polarity: Polarity
    stream: StreamName
    data: MessageData

    @classmethod
    def produce(cls, stream: StreamName, data: MessageData) -> Action:
        return cls(Polarity.PRODUCE, stream, data)

    @classmethod
    def consume(cls, stream: StreamName, data: MessageData) -> Action:
        return cls(Polarity.CONSUME, stream, data)


@dataclass(frozen=True)
class TaskDef:
    function: TaskFunction
    inputs: tuple[StreamName, ...]
    output: StreamName
    name: str = ""

    @property
    def streams(self) -> tuple[StreamName, ...]:
        return (*self.inputs, self.output)


@dataclass(frozen=True)
class Archive:
    """Snapshot archive: epoch -> Value, sorted by epoch."""

    entries: tuple[tuple[int, Value], ...] = ()

    @classmethod
    def seeded(cls, value: Value) -> Archive:
        return cls(((0, value),))

    def __getitem__(self, epoch: int) -> Value:
        for key, value in self.entries:
            if key == epoch:
                return value
        raise KeyError(epoch)

    def __contains__(self, epoch: object) -> bool:
        return any(key == epoch for key, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def max_epoch(self) -> int:
        if not self.entries:
            raise ConfigurationError("snapshot archive is empty")
        return self.entries[-1][0]

    def stored(self, epoch: int, value: Value) -> Archive:
        kept = tuple(entry for entry in self.entries if entry[0] != epoch)
        return Archive(tuple(sorted((*kept, (epoch, value)), key=lambda e: e[0])))

    def trimmed(self, upto: int) -> Archive:
        return Archive(tuple(entry for entry in self.entries if entry[0] <= upto))


class Normal(NamedTuple):
    epoch: int
    value: Value


class Failed(Enum):
    FAILED = "fl"

    def __repr__(self) -> str:
        return "FAILED"


FAILED: Final = Failed.FAILED

Volatile = Normal | Failed


class ProcessorState(NamedTuple):
    archive: Archive
    volatile: Volatile

    @property
    def failed(self) -> bool:
        return self.volatile is FAILED


@dataclass(frozen=True)
class Cursors:
    """One processor's cursor row N_p, sorted by stream name."""

    entries: tuple[tuple[StreamName, int], ...] = ()

    @classmethod
    def zeroed(cls, streams: Iterable[StreamName]) -> Cursors:
        return cls(tuple((s, 0) for s in sorted(set(streams))))

    @classmethod
    def of(cls, **positions: int) -> Cursors:
        return cls(tuple(sorted(positions.items())))

    def __getitem__(self, stream: StreamName) -> int:
        for key, position in self.entries:
            if key == stream:
                return position
        raise KeyError(stream)

    def __contains__(self, stream: object) -> bool:
        return any(key == stream for key, _ in self.entries)

    def __iter__(self) -> Iterator[StreamName]:
        return (key for key, _ in self.entries)

    def positioned(self, stream: StreamName, position: int) -> Cursors:
        return Cursors(
            tuple(
                (key, position if key == stream else old)
                for key, old in self.entries
            )
        )

    def advanced(self, stream: StreamName) -> Cursors:
        return self.positioned(stream, self[stream] + 1)


def message_sort_key(message: Message) -> tuple[str, int, int, str]:
    data = message.data
    return (message.stream, message.seq, data.epoch, display_data(data))


@dataclass(frozen=True)
class Configuration:
    processors: tuple[TaskDef, ...]
    states: tuple[ProcessorState, ...]
    cursors: tuple[Cursors, ...]
    messages: frozenset[Message]
    initial_inputs: frozenset[Message] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not (len(self.processors) == len(self.states) == len(self.cursors)):
            raise ConfigurationError(
                "processors, states and cursors differ in length: "
                f"{len(self.processors)}/{len(self.states)}/{len(self.cursors)}"
            )

    @cached_property
    def _index(self) -> dict[tuple[StreamName, int], tuple[Message, ...]]:
        index: defaultdict[tuple[StreamName, int], list[Message]] = defaultdict(list)
        for message in self.messages:
            index[message.stream, message.seq].append(message)
        return {
            key: tuple(sorted(found, key=message_sort_key))
            for key, found in index.items()
        }

    def at(self, stream: StreamName, seq: int) -> tuple[Message, ...]:
        """Messages stored at ``(stream, seq)``; empty when absent."""
        return self._index.get((stream, seq), ())

    def producer_of(self, stream: StreamName) -> ProcessorId | None:
        for pid, task in enumerate(self.processors):
            if task.output == stream:
                return pid
        return None

    def replace(self, **changes: object) -> Configuration:
        values = {
            "processors": self.processors,
            "states": self.states,
            "cursors": self.cursors,
            "messages": self.messages,
            "initial_inputs": self.initial_inputs,
        }
        values.update(changes)
        return Configuration(**values)  # type: ignore[arg-type]


def apply_action(
    x: Action, n_p: Cursors, m: frozenset[Message]
) -> tuple[Cursors, frozenset[Message]] | None:
    """Apply one action to a cursor row and a message set.

    Returns ``None`` when the action is undefined, i.e. a consumption of a
    message that is not present at the cursor.
    """
    position = n_p[x.stream]
    message = Message(position, x.stream, x.data)
    if x.polarity is Polarity.PRODUCE:
        return n_p.advanced(x.stream), m | {message}
    if message not in m:
        return None
    return n_p.advanced(x.stream), m


def apply_actions(
    xs: Sequence[Action], n_p: Cursors, m: frozenset[Message]
) -> tuple[Cursors, frozenset[Message]] | None:
    for x in xs:
        applied = apply_action(x, n_p, m)
        if applied is None:
            return None
        n_p, m = applied
    return n_p, m


def messages_on_stream(m: Iterable[Message], s: StreamName) -> frozenset[Message]:
    return frozenset(message for message in m if message.stream == s)


def gce(c: Configuration) -> int:
    """Greatest common epoch: min over processors of their latest snapshot.

    Failed processors participate, since failure keeps the archive.
    """
    if not c.states:
        raise ConfigurationError("configuration has no processors")
    return min(state.archive.max_epoch for state in c.states)


def out(c: Configuration) -> frozenset[Message]:
    committed = gce(c)
    return frozenset(m for m in c.messages if m.data.epoch <= committed)


def lcs(c: Configuration) -> Configuration:
    committed_epoch = gce(c)
    committed = out(c)
    counts = Counter(m.stream for m in committed)

    states = tuple(
        ProcessorState(
            state.archive.trimmed(committed_epoch),
            Normal(committed_epoch + 1, state.archive[committed_epoch]),
        )
        for state in c.states
    )
    cursors = tuple(
        Cursors(tuple((s, counts[s]) for s in row)) for row in c.cursors
    )
    return c.replace(
        states=states,
        cursors=cursors,
        messages=c.initial_inputs | committed,
    )


def source_streams(c: Configuration) -> frozenset[StreamName]:
    return frozenset(m.stream for m in c.initial_inputs)


def sink_streams(c: Configuration) -> frozenset[StreamName]:
    consumed = {s for task in c.processors for s in task.inputs}
    return frozenset(
        task.output for task in c.processors if task.output not in consumed
    )


def producer_cursor(c: Configuration, s: StreamName) -> int:
    """|D↓s| for a source stream, the producing task's cursor otherwise."""
    producer = c.producer_of(s)
    if producer is not None:
        return c.cursors[producer][s]
    return len(messages_on_stream(c.initial_inputs, s))


def well_formed(c: Configuration) -> bool:
    outputs = [task.output for task in c.processors]
    if len(set(outputs)) != len(outputs):
        return False
    if not c.initial_inputs <= c.messages:
        return False

    for task, row in zip(c.processors, c.cursors):
        if set(row) != set(task.streams):
            return False

    by_stream: defaultdict[StreamName, list[Message]] = defaultdict(list)
    for message in c.messages:
        by_stream[message.stream].append(message)
    streams = set(by_stream) | {s for row in c.cursors for s in row}

    for s in streams:
        top = producer_cursor(c, s)
        present = sorted(by_stream[s], key=message_sort_key)
        if [m.seq for m in present] != list(range(top)):
            return False
        if not _epochs_divided(present):
            return False
        for task, row in zip(c.processors, c.cursors):
            if s in task.inputs and row[s] > top:
                return False

    for state in c.states:
        if not state.archive.entries:
            return False
        match state.volatile:
            case Normal(epoch, _):
                if epoch < 1 or epoch != state.archive.max_epoch + 1:
                    return False
    return True


def _epochs_divided(present: Sequence[Message]) -> bool:
    """Epochs non-decreasing, each closed by exactly one Border."""
    current = 0
    closed = 0
    for message in present:
        epoch = message.data.epoch
        if epoch < 1 or epoch < current or epoch <= closed:
            return False
        if epoch > current and current not in (0, closed):
            return False
        if message.data.is_border:
            closed = epoch
        current = epoch
    return True


def display_value(v: Value) -> str:
    match v:
        case Tag.RESET:
            return "Reset"
        case Tag.UNIT:
            return "()"
        case Record(items):
            return "{" + ",".join(f"{key}:{val}" for key, val in items) + "}"
        case _:
            return str(v)


def display_data(d: MessageData) -> str:
    match d.case:
        case Event(payload):
            return display_value(payload)
        case _:
            return "BD"


def average(v: Value) -> int:
    """Average of an incremental-average state, floor division, 0 when empty."""
    if not isinstance(v, Record):
        raise ConfigurationError(f"not an average state: {display_value(v)}")
    count = v["count"]
    return v["sum"] // count if count else 0
