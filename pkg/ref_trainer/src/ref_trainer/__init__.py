"""Reference evaluator plugin: trains networks built from neutral descriptions."""

from .config import PluginConfig
from .model_builder import UnsupportedPrimitive, build_model, trainable_params
from .shapes import generate_shapes_dataset

__version__ = "0.1.0"
