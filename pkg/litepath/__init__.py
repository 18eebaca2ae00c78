"""
LitePath package.
"""

__version__ = "1.0.0"
__author__ = "LitePath Team"

from litepath.config.constants import Constants
from litepath.utils.utils import Utils, LitePathError, ValidationError
from litepath.config.config_manager import ConfigManager, RunConfig
from litepath.core.encoder import EncoderConfig, VisionEncoder
from litepath.core.heads import ABMILHead, ScoringNet
from litepath.core.bundle import ModelBundle
from litepath.core.selector import SelectionConfig, select
from litepath.services.pipeline import InferencePipeline
from litepath.app import LitePathApp
