"""Exceptions raised by the solver library, the tasks and the benchmark CLI."""


class TecuError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(TecuError, ValueError):
    """A parameter or input violates a documented precondition."""


class UnsupportedUpdateError(TecuError):
    """The requested update rule needs an oracle the problem does not register."""


class NumericalFailureError(TecuError):
    """A numerical routine (power iteration, factorization) did not succeed."""


class InternalInvariantError(TecuError):
    """An accepted iterate broke an invariant the solver must maintain."""


class OracleError(TecuError):
    """A problem oracle raised while being validated."""

    def __init__(self, oracle: str, sample: int, error: Exception):
        super().__init__(f"oracle '{oracle}' failed at sample {sample}: {error}")
        self.oracle = oracle
        self.sample = sample


class ConfigError(TecuError):
    """The experiment configuration is malformed."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        context = ""
        if field is not None:
            context += f" [field '{field}']"
        if line is not None:
            context += f" [line {line}]"
        super().__init__(message + context)
        self.field = field
        self.line = line


class PnmParseError(TecuError):
    """A netpbm file could not be parsed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
