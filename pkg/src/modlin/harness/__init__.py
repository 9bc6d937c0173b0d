"""Scenario configuration, closed-loop driver, outputs and CLI."""
from modlin.harness.loop import (
    IdentityPlant,
    NumericalFailure,
    RunReport,
    StreamPredistorter,
    apply_predistortion,
    linear_params,
    run_scenario,
)
from modlin.harness.report import report_text, summary, write_outputs
from modlin.harness.scenario import (
    Scenario,
    ScenarioError,
    dump_scenario,
    load_scenario,
    scenario_from_text,
    scenario_to_dict,
)

__all__ = [name for name in dir() if not name.startswith("_")]
