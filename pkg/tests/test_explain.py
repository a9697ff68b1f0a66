import pytest


def test_incremental_average_execution(average_scenario):
    """The hand-drawn execution: volatile averages, explanation and output."""
    from absflow.sim import run
    from absflow.model import Normal, gce, average
    from absflow.explain import construct_explanation

    result = run(average_scenario)
    volatile = [
        average(state.volatile.value) if isinstance(state.volatile, Normal) else "fl"
        for state in (cfg.states[0] for cfg in result.execution)
    ]
    assert volatile == [0, 1, 1, 2, "fl", 1, 0, 3, 4, 4]

    archives = [
        [(epoch, average(value)) for epoch, value in cfg.states[0].archive.entries]
        for cfg in result.execution
    ]
    assert archives[0] == [(0, 0)]
    assert archives[2] == [(0, 0), (1, 1)]
    assert archives[9] == [(0, 0), (1, 1), (2, 4)]
    assert [gce(result.execution[i]) for i in (0, 2, 9)] == [0, 1, 2]

    report = construct_explanation(result.trace, result.execution[0])
    assert report.verdict
    assert report.explaining_valid
    assert report.snapshot_mismatches == ()
    assert report.mapping == (0, 0, 2, 2, 2, 2, 3, 4, 5, 6)
    z = result.trace
    assert report.explaining_trace == (z[0], z[1], z[5], z[6], z[7], z[8])


def test_explanation_is_a_failure_free_run(average_scenario):
    import dataclasses

    from absflow.sim import ScriptedChoice, run
    from absflow.model import Event, out
    from absflow.trace import FailStep, RecoverStep
    from absflow.explain import construct_explanation

    faulty = run(average_scenario)
    report = construct_explanation(faulty.trace, faulty.execution[0])

    ints, resets = ScriptedChoice(0, 0), ScriptedChoice(0, 1)
    border = ScriptedChoice(0)
    failure_free = run(
        dataclasses.replace(
            average_scenario,
            failure_schedule=(),
            script=(ints, border, resets, ints, ints, border),
        )
    )
    assert failure_free.trace == report.explaining_trace
    assert not any(
        isinstance(step, (FailStep, RecoverStep)) for step in report.explaining_trace
    )

    final = [(m.stream, m.data.epoch, m.data.case) for m in out(failure_free.final)]
    averages = sorted(
        (epoch, case.payload)
        for stream, epoch, case in final
        if stream == "avgs" and isinstance(case, Event)
    )
    assert averages == [(1, 1), (2, 3), (2, 4)]


def test_failure_free_trace_explains_itself(pipeline_scenario):
    from absflow.sim import run
    from absflow.explain import construct_explanation

    result = run(pipeline_scenario.with_failures(()))
    report = construct_explanation(result.trace, result.execution[0])
    assert report.verdict
    assert report.explaining_trace == result.trace
    assert report.mapping == tuple(range(len(result.execution)))


def test_generations(average_scenario):
    from absflow.sim import run
    from absflow.explain import (
        Generation,
        strip_generation,
        split_generations,
        reorder_generation,
    )

    z = run(average_scenario).trace
    first, last = split_generations(z)
    assert first == Generation(z[:5], True)
    assert last == Generation(z[5:], False)

    # epoch-1 steps ahead, the epoch-2 event and the failure behind
    assert reorder_generation(first, 1).steps == (z[0], z[1], z[2], z[3], z[4])
    assert strip_generation(reorder_generation(first, 1), 1) == (z[0], z[1])
    assert strip_generation(reorder_generation(first, 0), 0) == ()
    assert strip_generation(last, None) == z[5:]

    assert split_generations(()) == [Generation((), False)]
    assert split_generations(z[:5]) == [Generation(z[:5], True)]


def test_reordering_moves_committed_steps_ahead(pipeline_scenario):
    from absflow.sim import run
    from absflow.trace import step_epoch
    from absflow.explain import Generation, reorder_generation

    z = run(pipeline_scenario.with_failures(())).trace
    reordered = reorder_generation(Generation(z, False), 1).steps
    epochs = [step_epoch(step) for step in reordered]
    boundary = epochs.index(2)
    assert set(epochs[:boundary]) == {1}
    assert set(epochs[boundary:]) == {2}
    assert sorted(map(repr, reordered)) == sorted(map(repr, z))


def test_observational_explanation():
    from absflow.explain import check_observational_explanation

    def same(x):
        return x

    assert check_observational_explanation([0, 1, 1, 2], [0, 1, 2], same) == (
        True,
        (0, 1, 1, 2),
    )
    # observations matched only out of order
    assert check_observational_explanation([2, 1], [1, 2], same) == (True, None)
    assert check_observational_explanation([0, 3], [0, 1, 2], same) == (False, None)


def test_epoch_count(average_scenario):
    from absflow.sim import run
    from absflow.explain import epoch_count

    counts = [epoch_count(cfg) for cfg in run(average_scenario).execution]
    assert counts == [0, 0, 1, 1, 1, 1, 1, 1, 1, 2]


def test_report_summary(average_scenario):
    import json

    from absflow.sim import run
    from absflow.explain import construct_explanation

    result = run(average_scenario)
    summary = construct_explanation(result.trace, result.execution[0]).summary()
    assert json.loads(summary.model_dump_json()) == {
        "original_len": 9,
        "explained_len": 6,
        "mapping": [0, 0, 2, 2, 2, 2, 3, 4, 5, 6],
        "verdict": True,
        "first_mismatch": None,
    }


def test_invalid_trace_has_no_explanation(average_scenario):
    from absflow.sim import run
    from absflow.explain import construct_explanation
    from absflow.exceptions import InvalidTraceError

    result = run(average_scenario)
    with pytest.raises(InvalidTraceError) as exc_info:
        construct_explanation(result.trace[1:], result.execution[0])
    assert exc_info.value.index == 0


def test_skipped_purge_is_detected(average_scenario):
    from absflow.sim import run
    from absflow.explain import construct_explanation
    from absflow.semantics import skip_lcs_purge

    with skip_lcs_purge():
        result = run(average_scenario)
        report = construct_explanation(result.trace, result.execution[0])
    assert not report.verdict
    assert report.snapshot_mismatches == (0,)
    assert report.first_mismatch == 9


def test_failure_transparency_sample(pipeline_scenario):
    from absflow.sim import run, build_initial
    from absflow.explain import check_failure_transparency_sample

    traces = [run(pipeline_scenario.with_seed(seed)).trace for seed in range(10)]
    assert check_failure_transparency_sample(build_initial(pipeline_scenario), traces)
