"""Discrete-event simulator for a gas-sensor mesh feeding a store-and-forward gateway."""

from .kernel import Simulator
from .runner import run, simulate
from .scenario import ScenarioConfig, ScenarioError, load_scenario, parse_scenario

__all__ = ["Simulator", "ScenarioConfig", "ScenarioError", "load_scenario", "parse_scenario",
           "run", "simulate"]
__version__ = "0.1.0"
