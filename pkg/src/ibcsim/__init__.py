"""Joint beamforming, scheduling and QoS management for MIMO interference broadcast channels."""

from .model import BeamformerSet, ChannelSet, Dimensions, ModelError
from .scenario import ConfigError, Scenario, ScenarioConfig, generate_scenario
from .algorithms import AlgorithmParams, AllocationResult, Mode, NumericalError, run

__all__ = [
    "BeamformerSet", "ChannelSet", "Dimensions", "ModelError", "ConfigError", "Scenario",
    "ScenarioConfig", "generate_scenario", "AlgorithmParams", "AllocationResult", "Mode",
    "NumericalError", "run",
]

__version__ = "0.1.0"
