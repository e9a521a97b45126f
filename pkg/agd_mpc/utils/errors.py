from enum import IntEnum


class ExitCode(IntEnum):
    """Process exit codes shared by every subcommand"""
    OK = 0
    CHECK_FAILED = 1
    INVALID_INPUT = 2
    DIVERGED = 3


class AgdMpcError(Exception):
    """Root of every error raised by this package"""


class InvalidArgumentError(AgdMpcError, ValueError):
    """Bad dimensions, non-finite values, out-of-range settings or wrong model kind"""


class NumericalError(AgdMpcError, ArithmeticError):
    """Internal numerical fault, e.g. a mass matrix that is not positive definite"""


class DivergenceError(AgdMpcError, RuntimeError):
    """A rollout produced a non-finite state"""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class ConfigError(InvalidArgumentError):
    """Invalid experiment config, located by file and line when possible"""

    def __init__(self, message, path=None, line=None, key=None):
        super().__init__(message)
        self.message = message
        self.path = path
        self.line = line
        self.key = key

    def __str__(self):
        location = self.path or "<config>"
        if self.line is not None:
            location = f"{location}:{self.line}"
        return f"{location}: {self.message}"
