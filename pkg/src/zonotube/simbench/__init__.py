"""Mobile-robot case study, closed-loop simulation, baseline and sweeps."""

from .closed_loop import RunLog, build_scenario, run_phase_portrait, scenario_data, simulate_closed_loop
from .config import ScenarioConfig
from .monitors import lyapunov_monitor, verify_log
from .plant import Plant
from .sweep import run_feasibility_sweep, write_sweep_csv
from .tzpc import build_tzpc, simulate_tzpc, tube_fixed_point

__all__ = [
    "Plant",
    "RunLog",
    "ScenarioConfig",
    "build_scenario",
    "build_tzpc",
    "lyapunov_monitor",
    "run_feasibility_sweep",
    "run_phase_portrait",
    "scenario_data",
    "simulate_closed_loop",
    "simulate_tzpc",
    "tube_fixed_point",
    "verify_log",
    "write_sweep_csv",
]
