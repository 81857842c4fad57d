"""Config-driven experiment runner: scenario registry, seeded parallel
replicas, CSV/JSONL persistence, and the ``branchsel`` CLI."""

from .config import ExperimentConfig, build_config, parse_config_file
from .scenarios import SCENARIOS, run_scenario, run_sweep

__all__ = ["ExperimentConfig", "build_config", "parse_config_file",
           "SCENARIOS", "run_scenario", "run_sweep"]
