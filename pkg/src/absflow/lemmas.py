"""Property checks over recorded executions.

Every check receives the scenario, one recorded run and a seeded generator,
and returns ``None`` on success or a short description of the violation.
"""

from __future__ import annotations

import logging
from random import Random
from typing import Final, NamedTuple
from dataclasses import field, dataclass
from collections import Counter
from collections.abc import Callable, Iterator

from .sim import Scenario, RunResult, run, extend_fair, resample_failures
from .model import Normal, Configuration, gce, lcs, out, well_formed
from .trace import (
    FailStep,
    BorderStep,
    RecoverStep,
    InvalidTrace,
    step_epoch,
    apply_trace,
    format_step,
    causal_order,
    sample_linear_extension,
    is_causality_preserving_permutation,
)
from .explain import (
    Generation,
    epoch_count,
    strip_generation,
    split_generations,
    reorder_generation,
    construct_explanation,
    check_observational_explanation,
)
from .semantics import (
    RECOVER,
    StepChoice,
    FailChoice,
    EventChoice,
    BorderChoice,
    derive,
    choice_of,
    enabled_steps,
)
from .exceptions import StepNotEnabledError

logger = logging.getLogger(__name__)

Check = Callable[[Scenario, RunResult, Random], "str | None"]


class LemmaCheck(NamedTuple):
    name: str
    check: Check


class LemmaFailure(NamedTuple):
    lemma: str
    seed: int
    detail: str


class _Span(NamedTuple):
    generation: Generation
    start: int
    end: int
    boundary: int

    @property
    def body(self) -> tuple:
        steps = self.generation.steps
        return steps[:-1] if self.generation.terminated_by_recover else steps


def _spans(result: RunResult) -> Iterator[_Span]:
    start = 0
    for g in split_generations(result.trace):
        end = start + len(g.steps)
        last = end - 1 if g.terminated_by_recover else end
        yield _Span(g, start, end, gce(result.execution[last]))
        start = end


def _commits(before: Configuration, after: Configuration, step: object) -> bool:
    return isinstance(step, BorderStep) and gce(before) < gce(after)


def prefix_validity(s: Scenario, result: RunResult, rng: Random) -> str | None:
    k = rng.randint(0, len(result.trace))
    replayed = apply_trace(result.trace[:k], result.execution[0])
    if isinstance(replayed, InvalidTrace):
        return f"prefix of length {k} invalid at step {replayed.index}"
    if replayed != result.execution[: k + 1]:
        return f"prefix of length {k} replays to other configurations"
    return None


def committing_border_output(
    s: Scenario, result: RunResult, rng: Random
) -> str | None:
    execution = result.execution
    for i, step in enumerate(result.trace):
        before, after = execution[i], execution[i + 1]
        if out(before) != out(after) and not _commits(before, after, step):
            return f"step {i} `{format_step(step)}` changed out without committing"
    return None


def epoch_order(s: Scenario, result: RunResult, rng: Random) -> str | None:
    for span in _spans(result):
        body = span.body
        for i, j in causal_order(body).pairs():
            first, second = step_epoch(body[i]), step_epoch(body[j])
            if first is not None and second is not None and first > second:
                return (
                    f"epoch-{first} step {span.start + i} happens before "
                    f"epoch-{second} step {span.start + j}"
                )
    return None


def reordering_output(s: Scenario, result: RunResult, rng: Random) -> str | None:
    execution = result.execution
    for span in _spans(result):
        body = span.body
        reordered = reorder_generation(Generation(body, False), span.boundary).steps
        replay = apply_trace(reordered, execution[span.start])
        if isinstance(replay, InvalidTrace):
            return f"reordered generation at {span.start} invalid: {replay.reason}"
        for offset, step in enumerate(body):
            i = span.start + offset
            if not _commits(execution[i], execution[i + 1], step):
                continue
            q = reordered.index(step)
            if out(replay[q + 1]) != out(execution[i + 1]):
                return f"committing border {i} observed differently after reordering"
    return None


def causal_permutation(s: Scenario, result: RunResult, rng: Random) -> str | None:
    z, start = result.trace, result.execution[0]
    permuted, f = sample_linear_extension(z, rng)
    if not is_causality_preserving_permutation(z, permuted, f):
        return "sampled permutation breaks happens-before"
    replay = apply_trace(permuted, start)
    if isinstance(replay, InvalidTrace):
        return f"permuted trace invalid at step {replay.index}: {replay.reason}"
    if replay[-1] != result.final:
        return "permuted trace ends in another configuration"
    return None


def snapshot_merge(s: Scenario, result: RunResult, rng: Random) -> str | None:
    execution = result.execution
    for span in _spans(result):
        if not span.generation.terminated_by_recover:
            continue
        reordered = reorder_generation(span.generation, span.boundary)
        kept = strip_generation(reordered, span.boundary)
        replay = apply_trace(kept, execution[span.start])
        if isinstance(replay, InvalidTrace):
            return f"stripped generation at {span.start} invalid: {replay.reason}"
        if replay[-1] != lcs(execution[span.end - 1]):
            return f"stripped generation at {span.start} misses the snapshot"
        if replay[-1] != execution[span.end]:
            return f"stripped generation at {span.start} misses the recovery"
    return None


def lcs_idempotence(s: Scenario, result: RunResult, rng: Random) -> str | None:
    for i, config in enumerate(result.execution):
        snapshot = lcs(config)
        if lcs(snapshot) != snapshot:
            return f"lcs not idempotent at configuration {i}"
        if gce(snapshot) != gce(config) or out(snapshot) != out(config):
            return f"lcs changes gce or out at configuration {i}"
    return None


def out_monotonicity(s: Scenario, result: RunResult, rng: Random) -> str | None:
    execution = result.execution
    for i in range(len(result.trace)):
        before, after = execution[i], execution[i + 1]
        if not out(before) <= out(after):
            return f"out shrinks at step {i}"
        if gce(before) > gce(after):
            return f"gce decreases at step {i}"
        if after.initial_inputs != before.initial_inputs:
            return f"initial inputs change at step {i}"
    return None


def well_formedness(s: Scenario, result: RunResult, rng: Random) -> str | None:
    for i, config in enumerate(result.execution):
        if not well_formed(config):
            return f"configuration {i} is not well formed"
    return None


def candidate_choices(c: Configuration) -> list[StepChoice]:
    """Every rule instance that names an existing processor and input."""
    candidates: list[StepChoice] = [RECOVER]
    for p, task in enumerate(c.processors):
        candidates.extend(EventChoice(p, j) for j in range(len(task.inputs)))
        candidates += [BorderChoice(p), FailChoice(p)]
    return candidates


def enabledness(s: Scenario, result: RunResult, rng: Random) -> str | None:
    for i, config in enumerate(result.execution):
        enabled = set(enabled_steps(config))
        for choice in candidate_choices(config):
            try:
                derive(config, choice)
            except StepNotEnabledError:
                applies = False
            else:
                applies = True
            if applies != (choice in enabled):
                state = "applies" if applies else "does not apply"
                return f"{choice} {state} at configuration {i} against enabled_steps"
    return None


def _survives(choice: StepChoice, step: object) -> bool:
    """Whether ``step`` leaves ``choice`` enabled by the rules."""
    if not isinstance(choice, (EventChoice, BorderChoice)):
        return True
    if isinstance(step, RecoverStep):
        return False
    return not (isinstance(step, FailStep) and step.processor == choice.processor)


def enabledness_persistence(
    s: Scenario, result: RunResult, rng: Random
) -> str | None:
    execution = result.execution
    for i, step in enumerate(result.trace):
        before, after = execution[i], execution[i + 1]
        taken = choice_of(step, before)
        still = set(enabled_steps(after))
        for choice in enabled_steps(before):
            if choice == taken or not _survives(choice, step):
                continue
            if isinstance(choice, (EventChoice, BorderChoice)) and choice not in still:
                return f"{choice} disabled by step {i} `{format_step(step)}`"
    return None


def archive_stability(s: Scenario, result: RunResult, rng: Random) -> str | None:
    execution = result.execution
    for i in range(len(result.trace)):
        before, after = execution[i], execution[i + 1]
        committed = gce(before)
        for p, (old, new) in enumerate(zip(before.states, after.states)):
            for epoch, value in old.archive.entries:
                if epoch > committed:
                    continue
                if epoch not in new.archive or new.archive[epoch] != value:
                    return f"step {i} rewrites epoch {epoch} in the archive of {p}"
    return None


def epoch_progress(s: Scenario, result: RunResult, rng: Random) -> str | None:
    execution = result.execution
    for i, step in enumerate(result.trace):
        before, after = execution[i], execution[i + 1]
        if isinstance(step, RecoverStep):
            restart = gce(before) + 1
            if any(
                not isinstance(state.volatile, Normal)
                or state.volatile.epoch != restart
                for state in after.states
            ):
                return f"recovery at step {i} does not restart at epoch {restart}"
            continue

        if not isinstance(step, BorderStep) and gce(before) != gce(after):
            return f"step {i} `{format_step(step)}` changes gce"
        for p, (old, new) in enumerate(zip(before.states, after.states)):
            if not isinstance(old.volatile, Normal):
                if isinstance(new.volatile, Normal):
                    return f"processor {p} resumes at step {i} without recovery"
            elif (
                isinstance(new.volatile, Normal)
                and new.volatile.epoch < old.volatile.epoch
            ):
                return f"epoch of processor {p} decreases at step {i}"
    return None


def monotone_explanation(s: Scenario, result: RunResult, rng: Random) -> str | None:
    report = construct_explanation(result.trace, result.execution[0])
    if not report.verdict:
        return f"explanation rejected, first mismatch {report.first_mismatch}"
    if any(a > b for a, b in zip(report.mapping, report.mapping[1:])):
        return "explanation mapping decreases"
    explained, witness = check_observational_explanation(
        report.original_execution, report.explaining_execution
    )
    if not explained or witness is None:
        return "no monotone witness for the explanation"
    return None


def explanation_chain(s: Scenario, result: RunResult, rng: Random) -> str | None:
    report = construct_explanation(result.trace, result.execution[0])
    faulty = report.original_execution
    explained = report.explaining_execution
    continued = extend_fair(explained[-1], max(s.max_steps, 1))
    extended = (*explained, *continued.execution[1:])

    if not check_observational_explanation(explained, extended)[0]:
        return "prefix is not explained by its continuation"
    if not check_observational_explanation(faulty, extended)[0]:
        return "explanation does not compose transitively"
    if not check_observational_explanation(faulty, explained, epoch_count)[0]:
        return "explanation breaks under the epoch-count observation"
    return None


LEMMA_CHECKS: Final[tuple[LemmaCheck, ...]] = (
    LemmaCheck("prefix-validity", prefix_validity),
    LemmaCheck("committing-border-output", committing_border_output),
    LemmaCheck("epoch-order", epoch_order),
    LemmaCheck("reordering-output", reordering_output),
    LemmaCheck("causal-permutation", causal_permutation),
    LemmaCheck("snapshot-merge", snapshot_merge),
    LemmaCheck("lcs-idempotence", lcs_idempotence),
    LemmaCheck("out-monotonicity", out_monotonicity),
    LemmaCheck("well-formedness", well_formedness),
    LemmaCheck("enabledness", enabledness),
    LemmaCheck("enabledness-persistence", enabledness_persistence),
    LemmaCheck("archive-stability", archive_stability),
    LemmaCheck("epoch-progress", epoch_progress),
    LemmaCheck("monotone-explanation", monotone_explanation),
    LemmaCheck("explanation-chain", explanation_chain),
)


def seeded_run(s: Scenario, seed: int) -> tuple[Scenario, RunResult]:
    """Run ``s`` under ``seed``; a scenario without failures gets a sampled
    failure schedule."""
    scenario = s.with_seed(seed) if s.failure_schedule else resample_failures(s, seed)
    return scenario, run(scenario)


def check_run(s: Scenario, seed: int) -> list[tuple[str, str | None]]:
    scenario, result = seeded_run(s, seed)
    rng = Random(seed)
    return [(name, check(scenario, result, rng)) for name, check in LEMMA_CHECKS]


@dataclass
class SuiteReport:
    runs: int = 0
    passed: Counter[str] = field(default_factory=Counter)
    failure: LemmaFailure | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def record(self, seed: int, outcomes: list[tuple[str, str | None]]) -> None:
        self.runs += 1
        for name, detail in outcomes:
            if detail is None:
                self.passed[name] += 1
            elif self.failure is None:
                logger.warning("%s failed for seed %d: %s", name, seed, detail)
                self.failure = LemmaFailure(name, seed, detail)


def run_lemma_suite(s: Scenario, *, seed: int, n: int) -> SuiteReport:
    report = SuiteReport()
    for offset in range(n):
        report.record(seed + offset, check_run(s, seed + offset))
        if not report.ok:
            break
    return report
