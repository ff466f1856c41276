"""Exception hierarchy shared by all modules."""


class LedMarkerError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(LedMarkerError, ValueError):
    """Inconsistent or invalid configuration."""


class SizeMismatch(LedMarkerError, ValueError):
    pass


class GenerationExhausted(LedMarkerError):
    """Dictionary generation ran out of attempts before reaching ``count``."""


class UnknownId(LedMarkerError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class NoMatch(LedMarkerError):
    """No rotation of an observed grid matches a dictionary entry."""


class BadFrequencies(LedMarkerError, ValueError):
    pass


class DegeneratePose(LedMarkerError):
    """Part of the marker projects onto or behind the camera plane."""


class DegenerateHistogram(LedMarkerError):
    """Otsu threshold is undefined because every pixel has the same value."""


class NoQuad(LedMarkerError):
    pass


class TooFewBands(LedMarkerError):
    pass


class UnknownCells(LedMarkerError):
    pass


class AmbiguousMatch(LedMarkerError):
    """Both polarity readings decode to different dictionary entries."""


class RecognitionFailed(LedMarkerError):
    """Detection failed; ``stage`` names the pipeline step that gave up."""

    def __init__(self, stage: str, cause: Exception | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"recognition failed at {stage}: {cause}")


class DegenerateQuad(LedMarkerError):
    pass


class BehindCamera(LedMarkerError):
    pass


class UnknownMarker(LedMarkerError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""
