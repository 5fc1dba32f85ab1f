"""Scenario-driven command-line runner."""
from .config import PRESET_SCENARIOS, ConfigError, Scenario, load_scenario
from .runner import RunSummary, convergence_study, run

__all__ = ["PRESET_SCENARIOS", "ConfigError", "Scenario", "load_scenario", "RunSummary",
           "convergence_study", "run"]
