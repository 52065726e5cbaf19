"""Symmetric face inpainting at desk scale.

Toy faces with exact part masks, a skip-free Swin generator, patch and
per-part discriminators, the full loss stack, alternating training, and the
symmetry concentration score with oracle inpainters.
"""

from .errors import (
    CheckpointError,
    ConfigError,
    DatasetIntegrityError,
    MaskGenerationError,
    MissingInputError,
    NumericError,
    OrganNotFoundError,
    ParameterError,
    SegmentationError,
    ShapeError,
    SymfaceError,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DatasetIntegrityError",
    "MaskGenerationError",
    "MissingInputError",
    "NumericError",
    "OrganNotFoundError",
    "ParameterError",
    "SegmentationError",
    "ShapeError",
    "SymfaceError",
]
