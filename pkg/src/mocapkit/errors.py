"""Exception hierarchy shared by every module.

Three branches matter for the CLI exit-code mapping:
ValidationError -> exit 2, MissingPrerequisite -> exit 3,
NumericError -> exit 4.
"""


class MocapError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MocapError):
    """Bad or inconsistent input data / configuration."""


class NumericError(MocapError):
    """A numeric procedure failed (degeneracy, non-convergence)."""


class MissingPrerequisite(MocapError):
    """A pipeline step was invoked before its inputs exist (or they are stale)."""

    def __init__(self, step: str, artifact: str, reason: str = "missing"):
        self.step = step
        self.artifact = artifact
        self.reason = reason
        super().__init__(f"step '{step}' requires '{artifact}' ({reason})")


# -- camera geometry ------------------------------------------------------

class NonPositiveDepth(ValidationError):
    """Point sits on or behind the camera plane (z_cam <= 0)."""


class NoConvergence(NumericError):
    """Iterative solver hit its iteration cap without meeting tolerance."""


# -- calibration ----------------------------------------------------------

class DegenerateConfiguration(NumericError):
    """Point correspondences are collinear or too few for a homography."""


class InsufficientViews(ValidationError):
    """Fewer views than the estimation problem needs."""


class RankDeficient(NumericError):
    """Linear system is singular (e.g. all board poses parallel)."""


class DisconnectedRig(ValidationError):
    """Some camera never co-observes the board with the rest of the rig."""


class ParseError(ValidationError):
    """A file failed to parse; message carries the line number when known."""


class SchemaError(ValidationError):
    """A file parsed but is missing/violating a required key."""


# -- sync / trimming ------------------------------------------------------

class RoiOutOfBounds(ValidationError):
    """LED region of interest falls outside the frame."""


class StreamTruncated(ValidationError):
    """Raw frame stream ended mid-frame."""


class EventCountMismatch(ValidationError):
    """A camera trace shows a different number of LED events than expected."""

    def __init__(self, camera: str, found: int, expected: int):
        self.camera = camera
        self.found = found
        self.expected = expected
        super().__init__(
            f"camera '{camera}': found {found} LED event(s), expected {expected}"
        )


class SkewTooLarge(ValidationError):
    """Per-camera trim windows of one trial differ too much in length."""

    def __init__(self, trial: int, frames: int, limit: int):
        self.trial = trial
        self.frames = frames
        self.limit = limit
        super().__init__(
            f"trial {trial}: cross-camera window skew {frames} frames exceeds {limit}"
        )


class InvertedRange(ValidationError):
    """Manual trim window has start > end."""


class OverlappingTrials(ValidationError):
    """Synthetic LED trials would overlap in time."""


# -- triangulation --------------------------------------------------------

class DegenerateGeometry(NumericError):
    """Triangulation nullspace dimension > 1 (e.g. identical camera centers)."""


class SchemaMismatch(ValidationError):
    """Landmark schemas disagree across inputs."""


class EmptyInput(ValidationError):
    """No usable data rows."""


# -- trajectory -----------------------------------------------------------

class TooShort(ValidationError):
    """Series has too few present samples for the operation."""


class NonUniform(ValidationError):
    """Operation requires uniform sampling."""


class ContainsGaps(ValidationError):
    """Operation requires a gap-free span."""


# -- metrics --------------------------------------------------------------

class ZeroVariance(NumericError):
    """Correlation undefined: a series is constant."""


class DegenerateZeroJerk(NumericError):
    """Jerk integral is exactly zero (constant-velocity motion)."""


class ZeroPath(NumericError):
    """Path length is zero over the evaluation window."""


class DegenerateVariance(NumericError):
    """ICC denominator is zero (no variance between subjects)."""


# -- features -------------------------------------------------------------

class DegenerateVertex(ValidationError):
    """Angle vertex coincides with an endpoint."""


class TooFewPoints(ValidationError):
    """Convex hull needs at least 4 points."""


# -- dataset / pipeline ---------------------------------------------------

class NonVideoInLeaf(ValidationError):
    """A trial folder contains a non-video file."""


class SuffixMismatch(ValidationError):
    """A file name does not match the configured camera suffix pattern."""


class CameraSetInconsistent(ValidationError):
    """Trials disagree on the set of camera ids."""


class NothingToReport(ValidationError):
    """Report step found no computed metrics."""
