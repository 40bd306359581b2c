"""Exception hierarchy shared across the pipeline."""


class PanofixError(Exception):
    """Base class for all errors raised by this package."""


class ImageIOError(PanofixError):
    """Unreadable file, unsupported bit depth, or unsupported channel count."""


class ValidationError(PanofixError):
    """Bad configuration or malformed input file (CSV, palette, label map)."""


class StitchError(PanofixError):
    """Rotation estimation broke between two frames."""

    def __init__(self, frame_index, message=None):
        self.frame_index = frame_index
        super().__init__(message or f"stitch break at frame pair ({frame_index}, {frame_index + 1})")


class AlignmentError(PanofixError):
    """Transform fit failed (too few matches or inliers)."""


class SegmentationError(PanofixError):
    """Label map inconsistent with its palette, or required category missing."""


class EmptyCategoryError(PanofixError):
    """A category mask selected for histogram collection contains no pixels."""


class PoissonError(PanofixError):
    """Poisson region has a connected component with no Dirichlet boundary."""


class InpaintError(PanofixError):
    """Exemplar source region cannot supply a single full patch."""


class StageError(PanofixError):
    """Wraps a module error with the name of the pipeline stage that failed."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
