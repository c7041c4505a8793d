"""Online Gaussian-process servo control of deformable objects with bounded memory."""

from .errors import (
    ConfigError,
    DegenerateInputError,
    EquilibriumError,
    FogprError,
    InputError,
    NumericalHealthError,
)
from .fo_gpr import GpState, OnlineGP, add_observation, empty_state, load_state, predict, save_state
from .gp_core import Hyperparams, Posterior

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "EquilibriumError",
    "FogprError",
    "GpState",
    "Hyperparams",
    "InputError",
    "NumericalHealthError",
    "OnlineGP",
    "Posterior",
    "add_observation",
    "empty_state",
    "load_state",
    "predict",
    "save_state",
]
