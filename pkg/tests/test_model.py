import pytest


def test_record_fields_are_sorted():
    from absflow.model import Record, display_value

    record = Record.of(sum=4, count=2)
    assert record.keys() == ("count", "sum")
    assert record["sum"] == 4
    assert record == Record.of(count=2, sum=4)
    assert display_value(record) == "{count:2,sum:4}"
    with pytest.raises(KeyError):
        record["mean"]


def test_display_forms():
    from absflow.model import UNIT, RESET, MessageData, display_data, display_value

    assert display_value(7) == "7"
    assert display_value(RESET) == "Reset"
    assert display_value(UNIT) == "()"
    assert display_data(MessageData.border(3)) == "BD"
    assert display_data(MessageData.event(1, RESET)) == "Reset"


def test_apply_action_produce_and_consume():
    from absflow.model import Action, Cursors, Message, MessageData, apply_action

    data = MessageData.event(1, 7)
    produced = apply_action(Action.produce("a", data), Cursors.of(a=0), frozenset())
    assert produced == (Cursors.of(a=1), frozenset({Message(0, "a", data)}))

    _, messages = produced
    consumed = apply_action(Action.consume("a", data), Cursors.of(a=0), messages)
    assert consumed == (Cursors.of(a=1), messages)

    # nothing with that data at the cursor
    border = Action.consume("a", MessageData.border(1))
    assert apply_action(border, Cursors.of(a=0), messages) is None
    assert apply_action(Action.consume("a", data), Cursors.of(a=1), messages) is None


def test_apply_actions_is_undefined_when_any_action_is():
    from absflow.model import Action, Cursors, MessageData, apply_actions

    data = MessageData.event(1, 1)
    actions = (Action.produce("b", data), Action.consume("a", data))
    assert apply_actions(actions, Cursors.of(a=0, b=0), frozenset()) is None
    assert apply_actions((), Cursors.of(a=0), frozenset()) == (
        Cursors.of(a=0),
        frozenset(),
    )


def test_gce_and_out(sum_scenario):
    from absflow.sim import build_initial
    from absflow.model import gce, out
    from absflow.semantics import step_fail, step_event, step_border

    c = build_initial(sum_scenario)
    assert gce(c) == 0
    assert out(c) == frozenset()

    c = step_border(step_event(c, 0, 0), 0)
    assert gce(c) == 1
    assert {m.data.epoch for m in out(c)} == {1}
    assert {(m.stream, m.seq) for m in out(c)} == {
        ("in", 0),
        ("in", 1),
        ("out", 0),
        ("out", 1),
    }

    # a failed processor keeps its archive
    assert gce(step_fail(c, 0)) == 1


def test_configuration_shape_errors():
    from absflow.model import Configuration, gce
    from absflow.exceptions import ConfigurationError

    with pytest.raises(ConfigurationError):
        gce(Configuration((), (), (), frozenset()))

    with pytest.raises(ConfigurationError, match="differ in length"):
        Configuration((), (), ((),), frozenset())  # type: ignore[arg-type]


def test_lcs_restores_the_latest_common_snapshot(sum_scenario):
    from absflow.sim import build_initial
    from absflow.model import Normal, Cursors, gce, lcs, out
    from absflow.semantics import step_event, step_border

    c = build_initial(sum_scenario)
    c = step_event(step_border(step_event(c, 0, 0), 0), 0, 0)
    assert c.states[0].volatile == Normal(2, 3)

    snapshot = lcs(c)
    assert lcs(snapshot) == snapshot
    assert gce(snapshot) == gce(c) == 1
    assert snapshot.states[0].volatile == Normal(2, 1)
    assert snapshot.cursors[0] == Cursors.of(**{"in": 2, "out": 2})
    assert snapshot.messages == c.initial_inputs | out(c)


def test_well_formed(sum_scenario):
    from absflow.sim import run, build_initial
    from absflow.model import Message, MessageData, well_formed

    c = build_initial(sum_scenario)
    assert well_formed(c)
    assert all(well_formed(cfg) for cfg in run(sum_scenario).execution)

    first = Message(0, "in", MessageData.event(1, 1))
    assert not well_formed(c.replace(messages=c.messages - {first}))

    duplicate = Message(0, "in", MessageData.event(1, 9))
    assert not well_formed(c.replace(messages=c.messages | {duplicate}))

    unclosed = Message(1, "in", MessageData.event(2, 9))
    assert not well_formed(
        c.replace(
            messages=(c.messages - {Message(1, "in", MessageData.border(1))})
            | {unclosed}
        )
    )


def test_producer_cursor_and_stream_roles(pipeline_scenario):
    from absflow.sim import build_initial
    from absflow.model import sink_streams, source_streams, producer_cursor

    c = build_initial(pipeline_scenario)
    assert producer_cursor(c, "in") == 5
    assert producer_cursor(c, "a") == 0
    assert source_streams(c) == {"in"}
    assert sink_streams(c) == {"sums"}


def test_average():
    from absflow.model import Record, average
    from absflow.exceptions import ConfigurationError

    assert average(Record.of(sum=8, count=2)) == 4
    assert average(Record.of(sum=7, count=2)) == 3
    assert average(Record.of(sum=0, count=0)) == 0
    with pytest.raises(ConfigurationError):
        average(5)


def test_archive():
    from absflow.model import Archive
    from absflow.exceptions import ConfigurationError

    archive = Archive.seeded(0).stored(2, 7).stored(1, 5)
    assert archive.entries == ((0, 0), (1, 5), (2, 7))
    assert archive.max_epoch == 2
    assert archive[1] == 5
    assert 3 not in archive
    assert archive.trimmed(1).entries == ((0, 0), (1, 5))
    assert archive.stored(1, 6)[1] == 6

    with pytest.raises(ConfigurationError):
        Archive().max_epoch


def test_messages_on_stream():
    from absflow.model import Message, MessageData, messages_on_stream

    a0 = Message(0, "a", MessageData.event(1, 3))
    a1 = Message(1, "a", MessageData.border(1))
    b0 = Message(0, "b", MessageData.event(1, 3))
    m = frozenset({a0, a1, b0})
    assert messages_on_stream(m, "a") == {a0, a1}
    assert messages_on_stream(m, "b") == {b0}
    assert messages_on_stream(m, "c") == frozenset()
    assert messages_on_stream(frozenset(), "a") == frozenset()
