"""
Co-Carrying Ergonomics Toolkit

Bimanual arm kinematics, continuous ergonomic scoring and force
manipulability, ergonomic posture optimization, robot target generation,
minimum-jerk planning and a model-predictive impedance controller for
human-robot co-carrying, tied together by a scenario pipeline.
"""

__version__ = "1.0.0"
__description__ = "Ergonomic posture optimization and impedance control for human-robot co-carrying"

from .config import current_settings, get_settings
from .exceptions import CoCarryError, ConfigError, StageError
from .pipeline import Pipeline, ingest_frames, run_batch, run_pipeline
from .scenario import ScenarioConfig, load_scenario

__all__ = [
    "CoCarryError",
    "ConfigError",
    "Pipeline",
    "ScenarioConfig",
    "StageError",
    "current_settings",
    "get_settings",
    "ingest_frames",
    "load_scenario",
    "run_batch",
    "run_pipeline",
]
