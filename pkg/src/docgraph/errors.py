"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1, data
problems exit 2, numerical failures exit 3.
"""


class DocgraphError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(DocgraphError):
    """Bad flags, missing required arguments, or an invalid configuration."""


class ConfigError(UsageError):
    """A configuration value is out of range or inconsistent."""


class DataError(DocgraphError):
    """Malformed or inconsistent input data (files, cross-references)."""


class FormatError(DataError):
    """A line-oriented input file failed to parse.

    Carries the path and 1-based line number when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:" if line is None else f"{path}:{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class ShapeError(DocgraphError):
    """Tensor operands have incompatible shapes for the requested op."""


class NumericalError(DocgraphError):
    """A non-finite value (NaN/Inf) was produced or detected."""
