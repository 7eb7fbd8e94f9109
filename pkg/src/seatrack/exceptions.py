"""Exception types shared across the pipeline."""

from __future__ import annotations


class SeatrackError(Exception):
    """Base class for all seatrack errors."""


class PolarOrigin(SeatrackError):
    """Local-frame conversion is undefined when the origin sits at a pole."""


class AtInfinity(SeatrackError):
    """Projection produced a vanishing homogeneous scale."""


class OnHorizon(SeatrackError):
    """Pixel lies on the plane's vanishing line; deprojection diverges."""


class NoConvergence(SeatrackError):
    """Iterative undistortion failed to reach tolerance."""


class NoHorizonIntersection(SeatrackError):
    """Horizon line does not cross the requested vertical."""


class NonPositiveDistance(SeatrackError):
    """Bounding-box size model needs a positive distance."""


class SizeBelowMinimum(SeatrackError):
    """Bounding-box size at or below the model minimum has no finite distance."""


class DegenerateRow(SeatrackError):
    """Required inverse-homography coefficient is (numerically) zero."""


class DegenerateConfiguration(SeatrackError):
    """Point configuration does not determine a unique homography."""


class ParseError(SeatrackError):
    """Malformed input file row."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class OutOfRange(SeatrackError):
    """Query time outside the span of the data."""


class SingularInnovation(SeatrackError):
    """Kalman innovation covariance is not invertible."""


class NoTrajectories(SeatrackError):
    """Selection requires at least one finished trajectory."""


class AllMasked(SeatrackError):
    """Outlier masking left no points to smooth."""


class EmptyTrack(SeatrackError):
    """Track has no valid points."""


class DegenerateData(SeatrackError):
    """Regression input does not determine a slope."""


class NoOverlap(SeatrackError):
    """Prediction and truth time spans are disjoint."""
