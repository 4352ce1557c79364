"""Site-to-site traffic aggregation: edge pacing boxes, aggregate
congestion control, and the simulation harness used to evaluate them."""

__version__ = "0.1.0"

from .scenarios import (PRESETS, Scenario, ScenarioError,
                        load_scenario_file, preset_scenarios)
from .netsim import run_scenario, unloaded_fct, unloaded_reference

__all__ = [
    "PRESETS", "Scenario", "ScenarioError", "load_scenario_file",
    "preset_scenarios", "run_scenario", "unloaded_fct",
    "unloaded_reference", "__version__",
]
