"""Numerical laboratory for reversal-curse and chain-of-thought training dynamics."""

from .config import ExperimentConfig, parse_config
from .runner import RunArtifacts, run_experiment

__all__ = ["ExperimentConfig", "parse_config", "RunArtifacts", "run_experiment"]
__version__ = "0.1.0"
