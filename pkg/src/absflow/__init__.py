from .sim import (
    Scenario,
    RunResult,
    ScriptedChoice,
    LivenessReport,
    ScheduledFailure,
    run,
    run_fair,
    run_starving,
    build_initial,
    check_liveness,
    liveness_report,
    random_scenario,
    resample_failures,
    validate_scenario,
    enumerate_executions,
)
from .batch import BatchChecker, TransparencySummary
from .model import Configuration, gce, lcs, out, well_formed
from .trace import Trace, apply_trace, format_trace, happens_before
from .lemmas import LEMMA_CHECKS, run_lemma_suite
from .explain import (
    ExplanationReport,
    construct_explanation,
    check_observational_explanation,
    check_failure_transparency_sample,
)
from .scenario import load_scenario, parse_scenario, bundled_scenario
from .semantics import derive, apply_choice, enabled_steps, skip_lcs_purge
from .exceptions import AbsflowError, ScenarioError, StepNotEnabledError

__all__ = (
    "LEMMA_CHECKS",
    "AbsflowError",
    "BatchChecker",
    "Configuration",
    "ExplanationReport",
    "LivenessReport",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "ScheduledFailure",
    "ScriptedChoice",
    "StepNotEnabledError",
    "Trace",
    "TransparencySummary",
    "apply_choice",
    "apply_trace",
    "build_initial",
    "bundled_scenario",
    "check_failure_transparency_sample",
    "check_liveness",
    "check_observational_explanation",
    "construct_explanation",
    "derive",
    "enabled_steps",
    "enumerate_executions",
    "format_trace",
    "gce",
    "happens_before",
    "lcs",
    "liveness_report",
    "load_scenario",
    "out",
    "parse_scenario",
    "random_scenario",
    "resample_failures",
    "run",
    "run_fair",
    "run_lemma_suite",
    "run_starving",
    "skip_lcs_purge",
    "validate_scenario",
    "well_formed",
)
