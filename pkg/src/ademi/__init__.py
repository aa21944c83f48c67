"""Capacity-aware multi-view WiFi sensing: CSI synthesis, Doppler spectrograms,
quantized variational encoders and a multi-view edge classifier."""

from .channel import ChannelSpec, link_budget, latency_sweep
from .config import ExperimentConfig, load_config
from .csi_synth import SceneSpec, make_dataset
from .errors import ConfigError, ConvergenceError, DomainError, InsufficientCapacityError, NumericalError

__version__ = "0.1.0"

__all__ = ["ChannelSpec", "ConfigError", "ConvergenceError", "DomainError", "ExperimentConfig",
           "InsufficientCapacityError", "NumericalError", "SceneSpec", "link_budget", "load_config",
           "make_dataset", "latency_sweep"]
