"""Discrete-event simulator comparing push and pull data collection in low-power sensor networks."""
from .config import ConfigError, ScenarioConfig, load_config, resolve
from .network import InvariantError, Network, RunResult, run_scenario

__all__ = ["ConfigError", "InvariantError", "Network", "RunResult", "ScenarioConfig",
           "load_config", "resolve", "run_scenario"]
__version__ = "0.1.0"
