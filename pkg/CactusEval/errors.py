# errors.py


class CactusError(Exception):
    """Base class of every error raised by CactusEval."""


class LineError(CactusError):
    """An error that may point at a line of an input file."""

    line: int | None

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class LabelParseError(LineError):
    pass


class ValidationError(LineError):
    pass


class PredictionError(LineError):
    offenders: list[str]

    def __init__(self, message: str, line: int | None = None, offenders: list[str] | None = None):
        self.offenders = offenders or []
        super().__init__(message, line)


class TrainLogError(LineError):
    pass


class SplitError(CactusError):
    pass


class AugmentError(CactusError):
    pass


class MetricError(CactusError):
    pass


class BackendError(CactusError):
    image_id: str | None

    def __init__(self, message: str, image_id: str | None = None):
        self.image_id = image_id
        super().__init__(f"{image_id}: {message}" if image_id else message)


class BenchError(CactusError):
    pass


class ReportError(CactusError):
    pass


class ConfigError(CactusError):
    pass
