# modules/__init__.py
"""
Módulos del estimador Monte Carlo multinivel híbrido
"""

from .config_manager import get_config, ConfigManager, SimulationSettings
from .error_handler import get_error_handler, ErrorHandler, error_handler_decorator
from .network import ReactionNetwork, load_model, parse_model, model_hash
from .workmodel import MachineConstants, calibrate_machine, load_profile, save_profile
from .mlmc import LevelPlan, EstimateReport, calibrate, estimate

__all__ = [
    'get_config',
    'ConfigManager',
    'SimulationSettings',
    'get_error_handler',
    'ErrorHandler',
    'error_handler_decorator',
    'ReactionNetwork',
    'load_model',
    'parse_model',
    'model_hash',
    'MachineConstants',
    'calibrate_machine',
    'load_profile',
    'save_profile',
    'LevelPlan',
    'EstimateReport',
    'calibrate',
    'estimate'
]
