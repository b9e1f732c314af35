"""Exception hierarchy.

Everything raised on purpose derives from :class:`GazecalError`. The CLI maps
:class:`DataError` subclasses to exit code 2.
"""


class GazecalError(Exception):
    pass


class DataError(GazecalError):
    """Bad or unusable input data."""


class PointBehindCamera(GazecalError):
    pass


class DegenerateDirection(GazecalError):
    pass


class ZeroVector(GazecalError):
    pass


class TraceTooShort(DataError):
    pass


class NoClusters(DataError):
    pass


class AllInvalid(DataError):
    pass


class TargetNotVisible(DataError):
    pass


class ScriptError(DataError):
    pass


class DegenerateDesign(DataError):
    pass


class TraceEmpty(DataError):
    pass


class TraceFormatError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SceneFormatError(TraceFormatError):
    pass


class ConfigError(DataError):
    pass
