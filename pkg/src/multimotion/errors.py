"""Exception types raised across the package."""


class MultiMotionError(Exception):
    """Base class for all package-specific errors."""


class AngleAtPi(MultiMotionError):
    """Rotation angle is at or too close to pi for a well-defined log."""


class DegenerateInterval(MultiMotionError):
    """Time interval too short for the process covariance to be invertible."""


class BehindCamera(MultiMotionError):
    """Point has non-positive depth in the camera frame."""


class DegenerateDisparity(MultiMotionError):
    """Stereo disparity too small to triangulate."""


class EmptyProblem(MultiMotionError):
    """Estimation problem contains no observations."""


class SingularSystem(MultiMotionError):
    """Normal equations are rank deficient after gauge fixing."""


class Diverged(MultiMotionError):
    """Optimizer cost grew for too many consecutive iterations."""


class InsufficientTracklets(MultiMotionError):
    """Not enough tracklets (or tracklet frames) to pose the problem."""


class NoMotionFound(MultiMotionError):
    """Segmentation could not find any motion hypothesis with support."""


class InsufficientPoses(MultiMotionError):
    """Trajectory too short for the requested calibration prefix."""


class EmptyScene(MultiMotionError):
    """Scenario describes a scene with nothing to observe."""


class GapTooShort(MultiMotionError):
    """Occlusion gap has no interior knots to rectify."""


class ScenarioFormatError(MultiMotionError):
    """Scenario file violates the schema; message names the field."""
