"""gridbess: deterministic islanded-microgrid simulator with distributed
finite-time, event-triggered BESS secondary control and SoC balancing."""

__version__ = "0.1.0"

from .controller import EventRecord, GainSet
from .engine import (RunResult, ScenarioSpec, compare_initial_scaling,
                     event_statistics, run_scenario, settling_time)
from .netgraph import (CommTopology, FeasibilityReport, check_feasibility,
                       grounded_matrix, laplacian, spectrum)
from .plant import Line, PhysNode, PlantModel, PlantState
from .scenario import ScenarioError, bundled_scenarios, load_scenario
from .storage import BessState, BessUnit, LeaderState

__all__ = [
    "__version__",
    "GainSet", "EventRecord",
    "RunResult", "ScenarioSpec", "run_scenario", "settling_time",
    "event_statistics", "compare_initial_scaling",
    "CommTopology", "FeasibilityReport", "laplacian", "grounded_matrix",
    "spectrum", "check_feasibility",
    "PhysNode", "Line", "PlantModel", "PlantState",
    "BessUnit", "BessState", "LeaderState",
    "ScenarioError", "load_scenario", "bundled_scenarios",
]
