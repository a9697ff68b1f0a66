from __future__ import annotations

import logging
from typing import Final, TypeVar, NamedTuple
from asyncio import Semaphore, gather, to_thread
from dataclasses import dataclass
from collections.abc import Callable, Iterable, Awaitable, Sequence

from .sim import Scenario, build_initial, enumerate_executions
from .model import Configuration
from .trace import Trace, format_trace
from .lemmas import SuiteReport, check_run, seeded_run
from .explain import (
    ExplanationReport,
    construct_explanation,
    check_observational_explanation,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_MAX_CONCURRENT: Final[int] = 8
# traces per worker call during exhaustive checks
CHUNK_SIZE: Final[int] = 256


class TransparencyOutcome(NamedTuple):
    trace: Trace
    report: ExplanationReport
    reason: str | None = None
    seed: int | None = None

    @property
    def passed(self) -> bool:
        return self.reason is None


@dataclass
class TransparencySummary:
    passed: int = 0
    failed: int = 0
    counterexample: TransparencyOutcome | None = None

    @property
    def ok(self) -> bool:
        return self.failed == 0

    @classmethod
    def of(cls, outcomes: Iterable[TransparencyOutcome]) -> TransparencySummary:
        summary = cls()
        for outcome in outcomes:
            if outcome.passed:
                summary.passed += 1
                continue
            summary.failed += 1
            if summary.counterexample is None:
                summary.counterexample = outcome
        return summary


def check_trace(
    initial: Configuration,
    z: Trace,
    *,
    failure_free: frozenset[Trace] | None = None,
    seed: int | None = None,
) -> TransparencyOutcome:
    """Build the explanation of ``z`` and say why it fails, if it does."""
    report = construct_explanation(z, initial)
    reason = None
    if not report.explaining_valid:
        reason = "explaining trace is not valid"
    elif not report.verdict:
        if report.first_mismatch is not None:
            reason = f"out differs at configuration {report.first_mismatch}"
        else:
            reason = f"recovery differs in generations {report.snapshot_mismatches}"
    elif not check_observational_explanation(
        report.original_execution, report.explaining_execution
    )[0]:
        reason = "observations are not explained"
    elif failure_free is not None and report.explaining_trace not in failure_free:
        reason = "explaining trace is not a failure-free execution"
    return TransparencyOutcome(z, report, reason, seed)


def check_seeded(s: Scenario, seed: int) -> TransparencyOutcome:
    _, result = seeded_run(s, seed)
    return check_trace(result.execution[0], result.trace, seed=seed)


def _check_traces(
    initial: Configuration,
    traces: Sequence[Trace],
    failure_free: frozenset[Trace],
) -> list[TransparencyOutcome]:
    return [check_trace(initial, z, failure_free=failure_free) for z in traces]


class BatchChecker:
    """Runs independent checks concurrently on worker threads."""

    def __init__(
        self,
        *,
        max_concurrent: int = DEFAULT_MAX_CONCURRENT,
        enable_tqdm: bool = False,
    ) -> None:
        self._max_concurrent: int = max_concurrent
        self._semaphore: Semaphore = Semaphore(max_concurrent)

        self.__tqdm = None
        if enable_tqdm:
            try:
                from tqdm.asyncio import tqdm

                self.__tqdm = tqdm
            except ImportError:
                logger.debug("tqdm is not installed, progress disabled")

    async def _check_with_semaphore(self, fn: Callable[..., T], *args: object) -> T:
        async with self._semaphore:
            return await to_thread(fn, *args)

    async def __gather_checks(self, *tasks: Awaitable[T], desc: str) -> list[T]:
        if self.__tqdm is None:
            return list(await gather(*tasks))

        return await self.__tqdm.gather(
            *tasks,
            desc=desc,
            colour="green",
            dynamic_ncols=True,
        )

    async def check_random(
        self, scenario: Scenario, runs: int, seed: int = 0
    ) -> TransparencySummary:
        """Check ``runs`` seeded executions of ``scenario``.

        Args:
            scenario: scenario to run; without a failure schedule every run
                draws its own. Scripted choices take precedence over the
                seed, so a fully scripted scenario with a schedule replays
                the same trace for every seed
            runs: number of seeds, starting at ``seed``
            seed: first seed

        Returns:
            TransparencySummary with the first failing run, if any
        """
        if scenario.script and scenario.failure_schedule:
            logger.info("scripted scenario: seeds only pick past the script")
        tasks = [
            self._check_with_semaphore(check_seeded, scenario, seed + offset)
            for offset in range(runs)
        ]
        outcomes = await self.__gather_checks(*tasks, desc="Checking runs")
        summary = TransparencySummary.of(outcomes)
        logger.info("random: %d passed, %d failed", summary.passed, summary.failed)
        return summary

    async def check_exhaustive(
        self, scenario: Scenario, depth: int, failure_budget: int
    ) -> TransparencySummary:
        """Check every trace up to ``depth`` with at most ``failure_budget``
        failures; explanations must be among the failure-free traces."""
        initial = build_initial(scenario)
        traces, failure_free = await gather(
            to_thread(enumerate_executions, scenario, depth, failure_budget),
            to_thread(enumerate_executions, scenario, depth, 0),
        )
        ordered = sorted(traces, key=lambda z: (len(z), format_trace(z)))
        logger.info("exhaustive: %d traces at depth %d", len(ordered), depth)

        tasks = [
            self._check_with_semaphore(
                _check_traces,
                initial,
                ordered[i : i + CHUNK_SIZE],
                failure_free,
            )
            for i in range(0, len(ordered), CHUNK_SIZE)
        ]
        chunks = await self.__gather_checks(*tasks, desc="Checking traces")
        return TransparencySummary.of(
            outcome for chunk in chunks for outcome in chunk
        )

    async def check_lemmas(
        self, scenario: Scenario, runs: int, seed: int = 0
    ) -> SuiteReport:
        seeds = range(seed, seed + runs)
        tasks = [self._check_with_semaphore(check_run, scenario, s) for s in seeds]
        results = await self.__gather_checks(*tasks, desc="Checking lemmas")

        report = SuiteReport()
        for s, outcomes in zip(seeds, results):
            report.record(s, outcomes)
        return report
