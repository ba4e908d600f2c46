"""Probe whether language features carry visual information.

An LSTM probe maps a token sequence's features to an image-patch feature
vector; retrieval recall on held-out categories measures how much visual
structure the language side encodes.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DataError,
    FormatError,
    NumericError,
    ProbeError,
    ShapeError,
    TruncationError,
    UsageError,
)

__all__ = [
    "__version__",
    "ConfigError",
    "DataError",
    "FormatError",
    "NumericError",
    "ProbeError",
    "ShapeError",
    "TruncationError",
    "UsageError",
]
