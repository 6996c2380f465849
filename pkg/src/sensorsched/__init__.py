"""Sensor orientation scheduling as a zero-sum game against an intruder."""

from .environment import (
    EnvironmentConfig,
    GridEnvironment,
    MapError,
    PathEnumerationError,
    build_coverage_tensor,
    build_sensors,
    compute_coverage,
    enumerate_paths,
    load_grid_map,
    parse_grid_map,
)
from .payoff import GameInstance, ProductStrategy, load_instance, save_instance
from .solvers import dwm_solve, exploitability_gap, solve_exact, wm_solve

__version__ = "0.1.0"
