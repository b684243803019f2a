"""Exception hierarchy shared by all stages of the positioning pipeline."""


class VlpError(Exception):
    """Base class for every error raised by this package."""


# geometry
class CoincidentCentroids(VlpError):
    pass


class HeightMismatch(VlpError):
    pass


class BehindCamera(VlpError):
    pass


# vision
class NotNormalized(VlpError, ValueError):
    pass


class TrackLost(VlpError):
    pass


# decode
class DecodeError(VlpError):
    pass


class RoiTooSmall(DecodeError):
    pass


class NoPeriodicity(DecodeError):
    pass


class UnknownId(DecodeError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class AmbiguousId(DecodeError):
    pass


# calibration
class CalibrationError(VlpError):
    pass


class EmptyInput(CalibrationError, ValueError):
    pass


class InsufficientSamples(CalibrationError):
    pass


class DegenerateFit(CalibrationError):
    pass


# pipeline
class InsufficientBeacons(VlpError):
    pass


class ExperimentFailed(VlpError):
    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records


# configuration / file formats
class ParseError(VlpError, ValueError):
    """Malformed input file. Carries the 1-based line and column when known."""

    def __init__(self, message, line=None, column=None, path=None):
        self.message = message
        self.line = line
        self.column = column
        self.path = path
        super().__init__(self._format())

    def _format(self):
        where = ""
        if self.path is not None:
            where += str(self.path)
        if self.line is not None:
            where += f":{self.line}"
            if self.column is not None:
                where += f":{self.column}"
        return f"{where}: {self.message}" if where else self.message


class ValidationError(ParseError):
    """Well-formed input that violates a domain invariant."""
