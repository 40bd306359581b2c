"""Correction of a pre-captured equirectangular image to match the current scene.

The pipeline aligns a phone-generated panorama onto a previously captured
omnidirectional image, transfers the current intensity per semantic category
by histogram matching, levels leftover regions with a Poisson solve, and
replaces the sky by copying the current sky plus exemplar inpainting of the
uncovered parts.
"""

from panofix.errors import (
    AlignmentError,
    ImageIOError,
    InpaintError,
    PanofixError,
    PoissonError,
    SegmentationError,
    StageError,
    StitchError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "ImageIOError",
    "InpaintError",
    "PanofixError",
    "PoissonError",
    "SegmentationError",
    "StageError",
    "StitchError",
    "ValidationError",
    "__version__",
]
