"""Exception hierarchy.

Every error raised on bad *data* derives from :class:`DataError`; the CLI maps
those to exit code 2 and :class:`InvariantViolation` to exit code 3.
"""


class RoadPriorError(Exception):
    pass


class DataError(RoadPriorError):
    pass


class DegenerateGeometry(DataError):
    pass


class OutOfPerceptionRange(DataError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


class OutOfRange(DataError, ValueError):
    pass


class NPTooLarge(DataError, ValueError):
    pass


class StepOutOfRange(DataError, ValueError):
    pass


class ClassMismatch(DataError):
    pass


class ConfigInvalid(DataError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaVersionMismatch(DataError):
    pass


class DenoiserFailure(RoadPriorError):
    def __init__(self, step, cause):
        self.step = step
        super().__init__(f"denoiser failed at step {step}: {cause}")


class InvariantViolation(RoadPriorError):
    pass


class RankDeficientWarning(UserWarning):
    pass
