"""Exception types shared across the package."""


class KaleidocalError(Exception):
    """Base class for all package errors."""


class InvalidInputError(KaleidocalError, ValueError):
    """Malformed or out-of-contract input (bad normal, negative sigma, ...)."""


class InvalidSequenceError(InvalidInputError):
    """Reflection sequence violates the no-consecutive-repeat / index-range rules."""


class BehindCameraError(KaleidocalError):
    """A point with non-positive depth was asked to project."""


class DegenerateGeometryError(KaleidocalError):
    """Linear system lost rank: parallel mirrors, coincident doublet, rank-deficient pose."""


class InfeasibleHypothesisError(KaleidocalError):
    """Neither normal sign triangulates the doublet in front of the camera."""


class InsufficientDataError(KaleidocalError):
    """Not enough doublets/observations to constrain the requested estimate."""


class NoSolutionError(KaleidocalError):
    """No base-structure hypothesis survived pruning.

    Carries the per-stage pruning counts so callers can report how the
    search died.
    """

    def __init__(self, message, pruning_counts=None):
        super().__init__(message)
        self.pruning_counts = dict(pruning_counts or {})
