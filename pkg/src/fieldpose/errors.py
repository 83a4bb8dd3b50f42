"""Exception taxonomy shared across the package.

Stage-level failures (matching, mining, PnP) carry enough context for the
pipeline to label which stage failed; file-format problems are split into
distinct classes so callers can tell a bad header from bad payload.
"""


class FieldposeError(Exception):
    """Base class for all package errors."""


class NearSingularRotationError(FieldposeError):
    """Rotation angle too close to pi for a stable logarithm."""


class BehindCameraError(FieldposeError):
    """Point has non-positive depth in the camera frame."""


class InvalidDepthError(FieldposeError):
    """Backprojection requested with a non-positive depth."""


class OutOfBoundsError(FieldposeError):
    """Pixel coordinate falls outside the image."""


class GridFormatError(FieldposeError):
    """Base class for voxel-grid file problems."""


class GridHeaderError(GridFormatError):
    """Magic bytes or header fields are malformed."""


class GridSizeError(GridFormatError):
    """Payload length disagrees with the header resolution."""


class NegativeDensityError(GridFormatError):
    """Stored density values violate the non-negativity invariant."""


class InsufficientCovisibilityError(FieldposeError):
    """Fewer than 4 points visible in both views."""


class TooFewPointsError(FieldposeError):
    """Not enough correspondences left for pose solving."""


class DegenerateConfigurationError(FieldposeError):
    """Point configuration is rank-deficient (e.g. collinear)."""


class NoConsensusError(FieldposeError):
    """RANSAC found no model with enough inliers."""


class EmptyMaskError(FieldposeError):
    """A sampling mask with no pixels was supplied or built."""


class InfeasibleOcclusionError(FieldposeError):
    """Requested occluder coverage cannot be placed in the image."""


class StageError(FieldposeError):
    """Wraps a failure with the pipeline stage it occurred in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
