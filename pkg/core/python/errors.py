"""
Exception hierarchy shared by the simulator modules.

Every error also derives from the closest builtin so callers may keep catching
ValueError / ArithmeticError / OSError.
"""


class CoraError(Exception):
    """Root of all simulator errors"""

    exit_code = 1


class ConfigurationError(CoraError, ValueError):
    """Invalid parameter, recipe or configuration value"""

    exit_code = 2

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class DimensionError(CoraError, ValueError):
    """Shapes of signals and channel gains do not conform"""

    exit_code = 2


class CodebookFormatError(ConfigurationError):
    """Codebook file could not be parsed or failed validation"""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class DegenerateChannelError(CoraError, ArithmeticError):
    """No usable channel gain was observed"""


class NumericError(CoraError, ArithmeticError):
    """Numerically invalid input such as a non-positive variance"""


class MisuseError(CoraError, RuntimeError):
    """API used outside its contract"""


class ConsistencyError(CoraError, RuntimeError):
    """Internal numerical consistency check failed"""


class ResultsIOError(CoraError, OSError):
    """Reading a spec or writing results failed"""

    exit_code = 3

    def __init__(self, message, path=None):
        self.path = path
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class EmptyResultError(CoraError, ValueError):
    """Aggregation requested over no results"""

    exit_code = 2
