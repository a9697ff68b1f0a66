from enum import Enum
from typing import Final, NamedTuple
from dataclasses import dataclass
from collections.abc import Iterable

from .model import UNIT, Tag, Value, Record, display_value
from .exceptions import TaskTypeError


class FunctionKind(str, Enum):
    INCREMENTAL_AVERAGE = "incremental_average"
    SUM = "sum"
    COUNT = "count"
    MAP_ADD_CONSTANT = "map_add_constant"
    IDENTITY = "identity"
    FILTER_GREATER_THAN = "filter_greater_than"
    FORWARD = "forward"

    def __str__(self) -> str:
        return self.value


class ValueKind(str, Enum):
    INT = "int"
    RECORD = "record"
    RESET = "reset"
    UNIT = "unit"

    def __str__(self) -> str:
        return self.value


class Signature(NamedTuple):
    # None accepts any payload and passes it through unchanged
    accepts: frozenset[ValueKind] | None
    state: ValueKind
    parameter: str | None = None


AVERAGE_FIELDS: Final[tuple[str, ...]] = ("count", "sum")

_NUMERIC: Final = frozenset({ValueKind.INT, ValueKind.RESET})

SIGNATURES: Final[dict[FunctionKind, Signature]] = {
    FunctionKind.INCREMENTAL_AVERAGE: Signature(_NUMERIC, ValueKind.RECORD),
    FunctionKind.SUM: Signature(_NUMERIC, ValueKind.INT),
    FunctionKind.COUNT: Signature(_NUMERIC, ValueKind.INT),
    FunctionKind.MAP_ADD_CONSTANT: Signature(
        frozenset({ValueKind.INT}), ValueKind.UNIT, "k"
    ),
    FunctionKind.IDENTITY: Signature(None, ValueKind.UNIT),
    FunctionKind.FILTER_GREATER_THAN: Signature(
        frozenset({ValueKind.INT}), ValueKind.UNIT, "k"
    ),
    FunctionKind.FORWARD: Signature(None, ValueKind.UNIT),
}


@dataclass(frozen=True)
class TaskFunction:
    kind: FunctionKind
    k: int = 0

    def __str__(self) -> str:
        if SIGNATURES[self.kind].parameter is None:
            return str(self.kind)
        return f"{self.kind}({self.k})"

    @property
    def signature(self) -> Signature:
        return SIGNATURES[self.kind]


def kind_of(v: Value) -> ValueKind:
    match v:
        case Tag.RESET:
            return ValueKind.RESET
        case Tag.UNIT:
            return ValueKind.UNIT
        case Record():
            return ValueKind.RECORD
        case _:
            return ValueKind.INT


def initial_state(f: TaskFunction) -> Value:
    """Default state for a task whose scenario gives no initial value."""
    match f.signature.state:
        case ValueKind.RECORD:
            return Record.of(sum=0, count=0)
        case ValueKind.INT:
            return 0
        case _:
            return UNIT


def check_state(f: TaskFunction, v: Value) -> None:
    expected = f.signature.state
    if kind_of(v) is not expected:
        raise TaskTypeError(f"{f} keeps a {expected} state, got {display_value(v)}")
    if expected is ValueKind.RECORD and isinstance(v, Record):
        if v.keys() != AVERAGE_FIELDS:
            raise TaskTypeError(
                f"{f} state needs fields {{sum, count}}, got {display_value(v)}"
            )


def output_kinds(
    f: TaskFunction, input_kinds: Iterable[ValueKind]
) -> frozenset[ValueKind]:
    """Kinds a task can emit when its inputs carry ``input_kinds``."""
    received = frozenset(input_kinds)
    accepts = f.signature.accepts
    if accepts is None:
        return received
    if rejected := received - accepts:
        names = ", ".join(sorted(map(str, rejected)))
        raise TaskTypeError(f"{f} does not accept {names} payloads")
    return frozenset({ValueKind.INT})


def eval_task_function(
    f: TaskFunction, v: Value, w: Value
) -> tuple[Value, tuple[Value, ...]]:
    accepts = f.signature.accepts
    if accepts is not None and kind_of(w) not in accepts:
        raise TaskTypeError(f"{f} cannot consume {display_value(w)}")

    match f.kind, w:
        case FunctionKind.INCREMENTAL_AVERAGE, Tag.RESET:
            return Record.of(sum=0, count=0), ()
        case FunctionKind.INCREMENTAL_AVERAGE, int():
            check_state(f, v)
            assert isinstance(v, Record)
            total, count = v["sum"] + w, v["count"] + 1
            return Record.of(sum=total, count=count), (total // count,)
        case FunctionKind.SUM | FunctionKind.COUNT, Tag.RESET:
            return 0, ()
        case FunctionKind.SUM, int():
            check_state(f, v)
            assert isinstance(v, int)
            return v + w, (v + w,)
        case FunctionKind.COUNT, int():
            check_state(f, v)
            assert isinstance(v, int)
            return v + 1, (v + 1,)
        case FunctionKind.MAP_ADD_CONSTANT, int():
            return v, (w + f.k,)
        case FunctionKind.FILTER_GREATER_THAN, int():
            return v, ((w,) if w > f.k else ())
        case FunctionKind.IDENTITY | FunctionKind.FORWARD, _:
            return v, (w,)
    raise TaskTypeError(f"{f} cannot consume {display_value(w)}")
