"""Speech-driven talking-face synthesis through semantic segmentation masks.

Audio drives a sequence of face-parsing masks (:mod:`talkseg.tsg`), which a
region-style generator turns into frames (:mod:`talkseg.sgi`).
"""

from .config import RunConfig
from .exceptions import (
    CheckpointMismatchError, ConfigurationError, InvalidInputError, TalkSegError,
    TrainingDivergenceError, UndefinedMetricError,
)
from .masks import DEFAULT_PALETTE, ClassPalette, EditSpec
from .sgi import SegmentationGuidedInjector
from .sync import SyncExpert
from .tsg import TalkingSegmentationGenerator

__version__ = "0.1.0"

__all__ = [
    "CheckpointMismatchError", "ClassPalette", "ConfigurationError", "DEFAULT_PALETTE", "EditSpec",
    "InvalidInputError", "RunConfig", "SegmentationGuidedInjector", "SyncExpert",
    "TalkSegError", "TalkingSegmentationGenerator", "TrainingDivergenceError",
    "UndefinedMetricError",
]
