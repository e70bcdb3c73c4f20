from __future__ import annotations


class ViewproxError(Exception):
    """Base class for every error raised by this package."""


# geometry
class EmptyStream(ViewproxError):
    pass


class DegenerateLandmarks(ViewproxError, ValueError):
    pass


class IllConditioned(ViewproxError):
    pass


class NotDetected(ViewproxError):
    pass


# signal
class BadWindow(ViewproxError, ValueError):
    pass


class BadSigma(ViewproxError, ValueError):
    pass


class DegenerateTrace(ViewproxError, ValueError):
    pass


# model
class ShapeMismatch(ViewproxError, ValueError):
    pass


class MissingDuration(ViewproxError, ValueError):
    pass


class NonFiniteLoss(ViewproxError, FloatingPointError):
    pass


# eval
class TooFewSubjects(ViewproxError, ValueError):
    pass


class EmptyPredictionList(ViewproxError, ValueError):
    pass


class LengthMismatch(ViewproxError, ValueError):
    pass


class EmptyInput(ViewproxError, ValueError):
    pass


# synth / io
class InvalidSpec(ViewproxError, ValueError):
    pass


class ManifestError(ViewproxError, ValueError):
    pass
