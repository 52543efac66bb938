"""IsoMax loss for out-of-distribution aware classification, at desk scale."""

__version__ = "0.1.0"

from isomax.errors import (
    ContractError,
    DimensionError,
    IsoMaxError,
    NumericError,
    ParseError,
    SpecError,
)

__all__ = [
    "__version__",
    "ContractError",
    "DimensionError",
    "IsoMaxError",
    "NumericError",
    "ParseError",
    "SpecError",
]
