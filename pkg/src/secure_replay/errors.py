"""Exception hierarchy shared by every module of the package."""


class ConformanceError(Exception):
    """Base class for all errors raised by secure_replay."""


# net model

class NetError(ConformanceError):
    pass


class PnmlError(NetError):
    pass


class DuplicateVisibleLabel(NetError):
    pass


class MissingMarking(NetError):
    pass


class UnknownTransition(NetError, KeyError):
    pass


class FiringDisabled(NetError):
    pass


class BoundExceeded(NetError):
    pass


# artifact / arithmetic

class ArtifactError(ConformanceError):
    pass


class SchemaVersionMismatch(ArtifactError):
    pass


class DimensionMismatch(ArtifactError, ValueError):
    pass


class ZeroDivisor(ArtifactError, ZeroDivisionError):
    pass


class BitWidthOverflow(ConformanceError, OverflowError):
    pass


# replay / logs

class UnknownActivity(ConformanceError, KeyError):
    def __init__(self, activity):
        super().__init__(activity)
        self.activity = activity

    def __str__(self):
        return f"activity {self.activity!r} has no counterpart transition in the model"


class EmptyTrace(ConformanceError, ValueError):
    pass


class EmptyLog(ConformanceError, ValueError):
    pass


class LogParseError(ConformanceError):
    pass


class MissingColumn(LogParseError):
    pass


# protocol

class ProtocolError(ConformanceError):
    def __init__(self, code, message=""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message


class ModeUnsupported(ProtocolError):
    def __init__(self, message=""):
        super().__init__("MODE_UNSUPPORTED", message)


class VersionMismatch(ProtocolError):
    def __init__(self, message=""):
        super().__init__("VERSION_MISMATCH", message)


class BackendUnavailable(ConformanceError):
    pass


class BadCiphertext(ConformanceError, ValueError):
    pass
