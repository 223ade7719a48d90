"""Monte-Carlo simulator for RIS-aided massive MIMO downlinks."""

from .config import ExperimentConfig, parse_config
from .harness import run_experiment, run_trial

__all__ = ["ExperimentConfig", "parse_config", "run_experiment", "run_trial"]
__version__ = "0.1.0"
