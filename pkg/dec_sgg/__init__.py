"""
DecSGG - decomposition and composition augmentation for scene graph relations
"""

from .version import __version__
from .core import DecPipeline, DataPaths, run_experiment
from .error_handler import DecError

__author__ = 'DecSGG Team'

__all__ = ['DecPipeline', 'DataPaths', 'run_experiment', 'DecError', '__version__']
