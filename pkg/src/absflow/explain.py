"""Failure-free explanations of faulty executions.

A trace is cut into generations at its Recover steps. Inside a generation
the steps of committed epochs are moved ahead of the rest, the rest is cut
off, and the surviving pieces are concatenated. Replaying the result from
the same initial configuration must show, at every point of the original
execution, an identical observable output.
"""

from __future__ import annotations

import logging
from typing import NamedTuple
from itertools import takewhile
from dataclasses import dataclass
from collections.abc import Hashable, Callable, Iterable, Sequence

from pydantic import Field, BaseModel, ConfigDict

from .model import Message, Configuration, gce, out
from .trace import (
    Trace,
    FailStep,
    TraceStep,
    BorderStep,
    RecoverStep,
    InvalidTrace,
    step_epoch,
    apply_trace,
)
from .exceptions import InvalidTraceError

logger = logging.getLogger(__name__)

Observation = Callable[[Configuration], Hashable]


@dataclass(frozen=True)
class Generation:
    steps: tuple[TraceStep, ...]
    terminated_by_recover: bool


def split_generations(z: Trace) -> list[Generation]:
    generations: list[Generation] = []
    current: list[TraceStep] = []
    for step in z:
        current.append(step)
        if isinstance(step, RecoverStep):
            generations.append(Generation(tuple(current), True))
            current = []
    if current or not generations:
        generations.append(Generation(tuple(current), False))
    return generations


def _committed(step: TraceStep, e: int | None) -> bool:
    epoch = step_epoch(step)
    return epoch is not None and (e is None or epoch <= e)


def reorder_generation(g: Generation, e: int | None) -> Generation:
    """Stable partition: steps of epochs ``<= e`` first, everything else after.

    ``e = None`` stands for the open last generation, where every Event and
    Border step counts as committed and only Fail steps fall behind.
    """
    kept = [step for step in g.steps if _committed(step, e)]
    rest = [step for step in g.steps if not _committed(step, e)]
    return Generation((*kept, *rest), g.terminated_by_recover)


def strip_generation(g: Generation, e: int | None) -> tuple[TraceStep, ...]:
    return tuple(takewhile(lambda step: _committed(step, e), g.steps))


def epoch_count(c: Configuration) -> int:
    """Highest epoch visible in ``out(c)``; 0 while nothing is committed."""
    return max((m.data.epoch for m in out(c)), default=0)


class IndexVerdict(NamedTuple):
    original: frozenset[Message]
    explained: frozenset[Message]
    equal: bool


class ReportSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    original_len: int
    explained_len: int
    mapping: list[int] = Field(default_factory=list)
    verdict: bool
    first_mismatch: int | None = None


@dataclass(frozen=True)
class ExplanationReport:
    original_trace: Trace
    explaining_trace: Trace
    mapping: tuple[int, ...]
    verdict: bool
    per_index: tuple[IndexVerdict, ...]
    first_mismatch: int | None
    snapshot_mismatches: tuple[int, ...]
    original_execution: tuple[Configuration, ...]
    explaining_execution: tuple[Configuration, ...]
    explaining_valid: bool

    def summary(self) -> ReportSummary:
        return ReportSummary(
            original_len=len(self.original_trace),
            explained_len=len(self.explaining_trace),
            mapping=list(self.mapping),
            verdict=self.verdict,
            first_mismatch=self.first_mismatch,
        )


def _is_committing(execution: Sequence[Configuration], z: Trace, i: int) -> bool:
    return isinstance(z[i], BorderStep) and gce(execution[i + 1]) > gce(execution[i])


def construct_explanation(z: Trace, c: Configuration) -> ExplanationReport:
    execution = apply_trace(z, c)
    if isinstance(execution, InvalidTrace):
        raise InvalidTraceError(execution.index, execution.reason)

    explaining: list[TraceStep] = []
    mapping = [0] * len(execution)
    # (generation, index in the explanation, index in the original execution)
    merges: list[tuple[int, int, int]] = []

    start = 0
    for k, g in enumerate(split_generations(z)):
        end = start + len(g.steps)
        base = len(explaining)
        mapping[start] = base

        if g.terminated_by_recover:
            boundary = gce(execution[end - 1])
            kept = strip_generation(reorder_generation(g, boundary), boundary)
            position = {step: base + q + 1 for q, step in enumerate(kept)}
            current = base
            for offset in range(len(g.steps) - 1):
                if _is_committing(execution, z, start + offset):
                    current = position[g.steps[offset]]
                mapping[start + offset + 1] = current
            mapping[end] = base + len(kept)
            merges.append((k, base + len(kept), end))
        else:
            kept = strip_generation(reorder_generation(g, None), None)
            current = base
            for offset, step in enumerate(g.steps):
                if not isinstance(step, FailStep):
                    current += 1
                mapping[start + offset + 1] = current

        explaining.extend(kept)
        start = end

    explaining_trace = tuple(explaining)
    explained = apply_trace(explaining_trace, c)
    explaining_valid = not isinstance(explained, InvalidTrace)
    if isinstance(explained, InvalidTrace):
        logger.warning(
            "explaining trace invalid at %d: %s", explained.index, explained.reason
        )
        explained = apply_trace(explaining_trace[: explained.index], c)
        assert not isinstance(explained, InvalidTrace)

    explained_outs = [out(cfg) for cfg in explained]
    per_index: list[IndexVerdict] = []
    for m, cfg in enumerate(execution):
        original = out(cfg)
        h = mapping[m]
        matched = explained_outs[h] if h < len(explained_outs) else frozenset()
        per_index.append(
            IndexVerdict(original, matched, h < len(explained) and original == matched)
        )

    snapshot_mismatches = tuple(
        k
        for k, explained_index, original_index in merges
        if explained_index >= len(explained)
        or explained[explained_index] != execution[original_index]
    )
    first_mismatch = next(
        (m for m, verdict in enumerate(per_index) if not verdict.equal), None
    )
    failure_free = not any(
        isinstance(step, (FailStep, RecoverStep)) for step in explaining_trace
    )
    verdict = (
        explaining_valid
        and failure_free
        and first_mismatch is None
        and not snapshot_mismatches
    )
    if snapshot_mismatches:
        logger.info("generation ends differ from recovery: %s", snapshot_mismatches)

    return ExplanationReport(
        original_trace=z,
        explaining_trace=explaining_trace,
        mapping=tuple(mapping),
        verdict=verdict,
        per_index=tuple(per_index),
        first_mismatch=first_mismatch,
        snapshot_mismatches=snapshot_mismatches,
        original_execution=execution,
        explaining_execution=explained,
        explaining_valid=explaining_valid,
    )


def check_observational_explanation(
    C: Sequence[Configuration],
    C2: Sequence[Configuration],
    observe: Observation = out,
) -> tuple[bool, tuple[int, ...] | None]:
    """Whether every observation of ``C`` also occurs somewhere in ``C2``.

    The witness is searched greedily left to right, which yields a
    non-decreasing mapping whenever ``observe`` is monotone along both
    executions.
    """
    targets = [observe(cfg) for cfg in C2]
    mapping: list[int] = []
    j = 0
    for cfg in C:
        seen = observe(cfg)
        while j < len(targets) and targets[j] != seen:
            j += 1
        if j == len(targets):
            break
        mapping.append(j)
    else:
        return True, tuple(mapping)

    available = set(targets)
    if all(observe(cfg) in available for cfg in C):
        logger.warning("observations are matched only by a non-monotone mapping")
        return True, None
    return False, None


def check_failure_transparency_sample(
    initial: Configuration, traces: Iterable[Trace]
) -> bool:
    for z in traces:
        report = construct_explanation(z, initial)
        if not report.verdict:
            return False
        explained, _ = check_observational_explanation(
            report.original_execution, report.explaining_execution
        )
        if not explained:
            return False
    return True
