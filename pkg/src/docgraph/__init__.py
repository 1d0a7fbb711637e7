"""Document-level entity linking and relation extraction toolkit."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DocgraphError,
    FormatError,
    NumericalError,
    ShapeError,
    UsageError,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DocgraphError",
    "FormatError",
    "NumericalError",
    "ShapeError",
    "UsageError",
    "__version__",
]
