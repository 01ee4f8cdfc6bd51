"""Desk-scale video captioning: adaptive frame selection, a windowed
3D-attention encoder with a concept head, and a cross-attending caption
decoder, trained jointly on caption and concept losses."""

__version__ = "0.1.0"

from .decoder import GenerationRequest
from .encoder import EncoderConfig
from .decoder import DecoderConfig
from .model import CaptionModel
from .training import TrainConfig, train

__all__ = [
    "CaptionModel",
    "DecoderConfig",
    "EncoderConfig",
    "GenerationRequest",
    "TrainConfig",
    "train",
    "__version__",
]
