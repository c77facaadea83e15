"""Serverless federated learning simulator with straggler-aware selection."""

from .config import ScenarioConfig, load_config, parse_config
from .simulation import ExperimentReport, Simulation, run_experiment

__version__ = "0.1.0"

__all__ = ["ScenarioConfig", "load_config", "parse_config", "ExperimentReport", "Simulation", "run_experiment"]
